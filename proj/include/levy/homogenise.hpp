#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "levy/fast_system.hpp"
#include "levy/observable.hpp"
#include "levy/ou.hpp"
#include "levy/symmetry.hpp"

namespace levy {

using SlowFn = std::function<void(std::span<const double> x, std::span<double> out)>;

/// Slow vector field a and coupling matrix b. b writes row-major d x d
/// (out[k * d + l] = b^{kl}); b_jacobian writes out[(a * d + k) * d + l] = d_a b^{kl}.
struct SlowField {
  std::string name;
  std::size_t dim = 0;
  SlowFn a;
  SlowFn b;
  SlowFn b_jacobian;
  Matrix s;
  Matrix a_matrix;
  bool reversible = true;
};

/// Sparse example: b^{i,d} = b^{j,1} = X^i, a = 0, S = +1 on B and -1 off it,
/// A = diag(1, ..., 1, -1). Indices are 1-based as in the usual notation.
SlowField section6_field(std::size_t d = 2, const std::vector<std::size_t>& fixed = {1}, std::size_t i = 1,
                         std::size_t j = 2);
/// a = 0, b = I.
SlowField additive_field(std::size_t d);
/// a = 0, b = c (constant).
SlowField constant_field(const Matrix& c);
/// Replaces a by x -> M x.
SlowField with_linear_drift(SlowField slow, const Matrix& m);

struct SlowResiduals {
  double a = 0.0;  // max |a(Sx) + S a(x)|
  double b = 0.0;  // max |b(Sx) + S b(x) A|
  double scale = 0.0;
};
SlowResiduals slow_residuals(const SlowField& slow, const std::vector<std::vector<double>>& probes);
std::vector<std::vector<double>> default_slow_probes(std::size_t d, std::size_t count = 64, std::uint64_t seed = 9);

/// 1/2 sum E^{gb} d_a b^{kb}(X) b^{ag}(X), the correction term only.
Vector drift_correction(const SlowField& slow, const Matrix& e, std::span<const double> x);

struct FastSlowRun {
  double epsilon = 0.1;
  Observable coupling;
  FastSystem fast;
  SlowField slow;
  std::vector<double> xi;
  double horizon = 1.0;
  double step_fast = 0.01;
  bool cold_start = false;
  // step-halving checks per run, and the defect above which the run fails
  std::size_t spot_checks = 4;
  double spot_tolerance = 1e-6;
  // slow path samples kept (0 keeps only the terminal state)
  std::size_t record_points = 0;
};

struct FastSlowPath {
  std::vector<double> times;
  std::vector<std::vector<double>> path;
  std::vector<double> terminal;
  double max_spot_defect = 0.0;
};

/// A nonempty `initial` replaces the seeded draw of the fast start.
FastSlowPath simulate_fast_slow(const FastSlowRun& run, std::uint64_t seed, std::span<const double> initial = {});

/// Fast-slow run whose fast channel is an OU process observed through v(y) = V y;
/// exact OU transitions, trapezoid coupling per fast step.
std::vector<double> simulate_fast_slow_ou(const OUSurrogate& ou, const Matrix& v, const SlowField& slow,
                                          double epsilon, std::span<const double> xi, double horizon,
                                          double step_fast, std::uint64_t seed);

/// Limiting Stratonovich SDE with corrected drift a + correction(E) and
/// Brownian covariance Sigma.
struct SdeModel {
  SlowField slow;
  Matrix sigma;
  Matrix e;
  Matrix sqrt_sigma;
  double min_eigenvalue = 0.0;
  bool floored = false;
};

/// Validates E skew and Sigma PSD down to -floor, clipping smaller eigenvalues to 0.
SdeModel make_sde(const SlowField& slow, const Matrix& sigma, const Matrix& e, double floor = 1e-8);

/// Heun (Stratonovich) integration to the horizon; result depends only on seed.
std::vector<double> simulate_sde(const SdeModel& model, std::span<const double> xi, double horizon,
                                 double step, std::uint64_t seed);
std::vector<double> simulate_sde(const SlowField& slow, const Matrix& sigma, const Matrix& e,
                                 std::span<const double> xi, double horizon, double step, std::uint64_t seed);

struct EnsembleLaw {
  std::string label;
  std::uint64_t base_seed = 0;
  std::vector<std::uint64_t> seeds;
  // one row per member
  Matrix samples;

  std::size_t size() const noexcept { return static_cast<std::size_t>(samples.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(samples.cols()); }
  Vector mean() const;
  Matrix covariance() const;
};

/// The fast starts simulate_fast_slow would draw for seeds base_seed + index,
/// so several runs can share one burn-in.
std::vector<std::vector<double>> draw_initial_states(const FastSlowRun& run, std::size_t members,
                                                     std::uint64_t base_seed, std::size_t threads);

/// Members use seeds base_seed + index and may run in parallel; results do
/// not depend on the thread count.
EnsembleLaw ensemble_fast_slow(const FastSlowRun& run, std::size_t members, std::uint64_t base_seed,
                               std::size_t threads, const std::string& label = "",
                               const std::vector<std::vector<double>>* initial = nullptr);
EnsembleLaw ensemble_sde(const SdeModel& model, std::span<const double> xi, double horizon, double step,
                         std::size_t members, std::uint64_t base_seed, std::size_t threads,
                         const std::string& label = "SDE");

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};
/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);
/// Limiting distribution tail Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
double ks_q(double lambda);

struct CompareThresholds {
  double ks_p_floor = 0.01;
  double mean_se = 3.0;
};

struct ComponentComparison {
  double mean_diff = 0.0;
  double pooled_se = 0.0;
  double ks_statistic = 0.0;
  double ks_p = 1.0;
  bool mean_ok = true;
  bool ks_ok = true;
};

struct LawComparison {
  std::vector<ComponentComparison> components;
  Matrix cov_diff;
  Matrix cov_se;
  bool passed = true;
  std::vector<std::size_t> failing;
};

LawComparison compare_laws(const EnsembleLaw& lhs, const EnsembleLaw& rhs, const CompareThresholds& th = {});

std::string comparison_json(const LawComparison& c, const std::string& lhs, const std::string& rhs);
/// One row per member: seed, then X components.
void write_ensemble_csv(const std::string& path, const EnsembleLaw& law);

}  // namespace levy
