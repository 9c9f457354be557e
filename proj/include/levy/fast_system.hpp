#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "levy/symmetry.hpp"

namespace levy {

/// Autonomous vector field y -> g(y); writes into `out`, never allocates.
using VectorField = std::function<void(std::span<const double> y, std::span<double> out)>;

/// y -> L y + c. For the reversal R of a fast system, L acts on tangent vectors.
struct AffineMap {
  Matrix linear;
  Vector offset;

  static AffineMap diagonal(const std::vector<double>& diag);
  std::size_t dim() const noexcept { return static_cast<std::size_t>(linear.rows()); }
  void apply(std::span<const double> y, std::span<double> out) const;
  void apply_linear(std::span<const double> v, std::span<double> out) const;
};

struct FastSystem {
  std::string name;
  std::size_t dim = 0;
  VectorField field;
  AffineMap reversal;
  std::vector<double> default_initial;
  double burn_in_time = 1000.0;
  double default_step = 0.01;
  bool reversible = true;
  std::vector<std::string> variables;
};

/// Equally spaced states y(start_time + k * step), stored row-major.
struct Trajectory {
  double step = 0.0;
  double start_time = 0.0;
  std::size_t dim = 0;
  std::vector<double> data;

  std::size_t size() const noexcept { return dim ? data.size() / dim : 0; }
  bool empty() const noexcept { return data.empty(); }
  double duration() const noexcept { return size() > 1 ? step * static_cast<double>(size() - 1) : 0.0; }
  std::span<const double> point(std::size_t i) const noexcept {
    return {data.data() + i * dim, dim};
  }
};

/// Classical fourth-order Runge-Kutta with reusable stage buffers.
class Rk4 {
public:
  explicit Rk4(std::size_t dim) : k1_(dim), k2_(dim), k3_(dim), k4_(dim), tmp_(dim) {}

  template <class F>
  void step(F&& f, std::span<double> y, double h) {
    const std::size_t n = y.size();
    f(std::span<const double>(y), std::span<double>(k1_));
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = y[i] + 0.5 * h * k1_[i];
    f(std::span<const double>(tmp_), std::span<double>(k2_));
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = y[i] + 0.5 * h * k2_[i];
    f(std::span<const double>(tmp_), std::span<double>(k3_));
    for (std::size_t i = 0; i < n; ++i) tmp_[i] = y[i] + h * k3_[i];
    f(std::span<const double>(tmp_), std::span<double>(k4_));
    for (std::size_t i = 0; i < n; ++i)
      y[i] += h / 6.0 * (k1_[i] + 2.0 * k2_[i] + 2.0 * k3_[i] + k4_[i]);
  }

private:
  std::vector<double> k1_, k2_, k3_, k4_, tmp_;
};

/// Number of fixed steps covering `duration` with a step no larger than `step`.
std::size_t step_count(double duration, double step);

/// Fixed-step RK4 from y0; returns step_count + 1 points including y0. The
/// step is shrunk to duration / step_count when `step` does not divide it.
Trajectory integrate(const FastSystem& system, std::span<const double> y0, double duration,
                     double step);

/// Seed-jittered start near the default initial condition.
std::vector<double> jittered_initial(const FastSystem& system, std::uint64_t seed);

/// Stationary start: the state after burn-in from the jittered initial condition.
std::vector<double> draw_stationary(const FastSystem& system, double step, std::uint64_t seed);

/// Trajectory sampling the invariant measure: burn-in is discarded and
/// (duration - burn_in_time) / step points are returned.
Trajectory sample_measure(const FastSystem& system, double duration, double step,
                          std::uint64_t seed);

/// max over probe points of |g(Ry) + R g(y)|_inf.
double reversibility_residual(const FastSystem& system, const Trajectory& probe);
/// max over probe points of |R(R(y)) - y|_inf.
double involution_residual(const FastSystem& system, const Trajectory& probe);

/// |one step of h - two steps of h/2|_inf from y.
double step_halving_defect(const FastSystem& system, std::span<const double> y, double h);

struct SpotCheck {
  std::size_t checked = 0;
  double max_defect = 0.0;
  // largest deviation between a recomputed step and the stored next point
  double max_replay_error = 0.0;
};

/// Step-halving check on a seeded random subset (`fraction`) of the steps.
SpotCheck spot_check(const FastSystem& system, const Trajectory& traj, double fraction,
                     std::uint64_t seed);

// Built-in systems.

/// q' = p, p' = -q - z p, z' = p^2 - T; reversible under (q, p, z) -> (q, -p, -z).
FastSystem nose_hoover(double temperature = 1.0);

/// Two anharmonic oscillators (on-site force q + alpha q^3, linear coupling
/// kappa (q1 - q2)), each driven by a Nose-Hoover chain of length two.
/// State per oscillator is (q, p, z, x); R flips p, z and x.
FastSystem nose_hoover_pair(double kappa = 1.0, double alpha = 1.0, double temperature = 1.0);

/// q' = p, p' = -q.
FastSystem harmonic();

/// Lorenz-63 with the reversal diag(1, -1, -1) attached; it is not reversible.
FastSystem lorenz63(double sigma = 10.0, double rho = 28.0, double beta = 8.0 / 3.0);

/// Zero field on R^m.
FastSystem null_system(std::size_t m);

}  // namespace levy
