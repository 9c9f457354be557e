#include "levy/fast_system.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "levy/random.hpp"

namespace levy {

AffineMap AffineMap::diagonal(const std::vector<double>& diag) {
  const auto n = static_cast<Eigen::Index>(diag.size());
  AffineMap r;
  r.linear = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) r.linear(i, i) = diag[static_cast<std::size_t>(i)];
  r.offset = Vector::Zero(n);
  return r;
}

void AffineMap::apply(std::span<const double> y, std::span<double> out) const {
  apply_linear(y, out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += offset(static_cast<Eigen::Index>(i));
}

void AffineMap::apply_linear(std::span<const double> v, std::span<double> out) const {
  const auto n = linear.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) s += linear(i, j) * v[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s;
  }
}

std::size_t step_count(double duration, double step) {
  if (!(step > 0.0)) throw Error("integration step must be positive");
  if (!(duration >= step * (1.0 - 1e-12))) throw Error("integration duration must be at least one step");
  return static_cast<std::size_t>(std::ceil(duration / step - 1e-9));
}

namespace {

void check_finite(std::span<const double> y, double t) {
  for (double v : y) {
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "non-finite state at time " << t;
      throw NumericalError(os.str(), t);
    }
  }
}

// Advances y by n steps of h, appending each new state to out when non-null.
void advance(const FastSystem& system, std::vector<double>& y, std::size_t n, double h,
             double t0, std::vector<double>* out) {
  Rk4 rk(system.dim);
  for (std::size_t k = 0; k < n; ++k) {
    rk.step(system.field, std::span<double>(y), h);
    if ((k & 1023U) == 0 || k + 1 == n) check_finite(y, t0 + h * static_cast<double>(k + 1));
    if (out) out->insert(out->end(), y.begin(), y.end());
  }
}

}  // namespace

Trajectory integrate(const FastSystem& system, std::span<const double> y0, double duration,
                     double step) {
  if (y0.size() != system.dim) throw DimensionError("integrate: initial state has wrong dimension");
  const std::size_t n = step_count(duration, step);
  Trajectory traj;
  traj.step = duration / static_cast<double>(n);
  traj.dim = system.dim;
  traj.data.reserve((n + 1) * system.dim);
  traj.data.assign(y0.begin(), y0.end());
  std::vector<double> y(y0.begin(), y0.end());
  check_finite(y, 0.0);
  advance(system, y, n, traj.step, 0.0, &traj.data);
  return traj;
}

std::vector<double> jittered_initial(const FastSystem& system, std::uint64_t seed) {
  std::vector<double> y0 = system.default_initial;
  if (y0.size() != system.dim) throw DimensionError("fast system default initial condition has wrong dimension");
  const CounterRng rng(seed, 1);
  for (std::size_t i = 0; i < y0.size(); ++i) y0[i] += 1e-3 * rng.normal(i);
  return y0;
}

std::vector<double> draw_stationary(const FastSystem& system, double step, std::uint64_t seed) {
  std::vector<double> y = jittered_initial(system, seed);
  if (system.burn_in_time > 0.0) {
    const std::size_t nb = step_count(system.burn_in_time, step);
    advance(system, y, nb, system.burn_in_time / static_cast<double>(nb), 0.0, nullptr);
  }
  return y;
}

Trajectory sample_measure(const FastSystem& system, double duration, double step,
                          std::uint64_t seed) {
  if (!(duration > system.burn_in_time))
    throw Error("sample_measure: duration must exceed the burn-in time");
  std::vector<double> y = draw_stationary(system, step, seed);
  const std::size_t n = step_count(duration - system.burn_in_time, step);
  Trajectory traj;
  traj.step = (duration - system.burn_in_time) / static_cast<double>(n);
  traj.start_time = system.burn_in_time;
  traj.dim = system.dim;
  traj.data.reserve(n * system.dim);
  traj.data.assign(y.begin(), y.end());
  advance(system, y, n - 1, traj.step, system.burn_in_time, &traj.data);
  return traj;
}

double reversibility_residual(const FastSystem& system, const Trajectory& probe) {
  const std::size_t m = system.dim;
  std::vector<double> ry(m), g(m), gr(m), rg(m);
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const auto y = probe.point(i);
    system.reversal.apply(y, ry);
    system.field(ry, gr);
    system.field(y, g);
    system.reversal.apply_linear(g, rg);
    for (std::size_t k = 0; k < m; ++k) worst = std::max(worst, std::abs(gr[k] + rg[k]));
  }
  return worst;
}

double involution_residual(const FastSystem& system, const Trajectory& probe) {
  const std::size_t m = system.dim;
  std::vector<double> ry(m), rry(m);
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const auto y = probe.point(i);
    system.reversal.apply(y, ry);
    system.reversal.apply(ry, rry);
    for (std::size_t k = 0; k < m; ++k) worst = std::max(worst, std::abs(rry[k] - y[k]));
  }
  return worst;
}

double step_halving_defect(const FastSystem& system, std::span<const double> y, double h) {
  Rk4 rk(system.dim);
  std::vector<double> a(y.begin(), y.end());
  std::vector<double> b(y.begin(), y.end());
  rk.step(system.field, std::span<double>(a), h);
  rk.step(system.field, std::span<double>(b), 0.5 * h);
  rk.step(system.field, std::span<double>(b), 0.5 * h);
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  return worst;
}

SpotCheck spot_check(const FastSystem& system, const Trajectory& traj, double fraction,
                     std::uint64_t seed) {
  SpotCheck out;
  if (traj.size() < 2) return out;
  const CounterRng rng(seed, 2);
  Rk4 rk(system.dim);
  std::vector<double> y(system.dim);
  for (std::size_t i = 0; i + 1 < traj.size(); ++i) {
    if (rng.uniform(i) >= fraction) continue;
    ++out.checked;
    const auto p = traj.point(i);
    out.max_defect = std::max(out.max_defect, step_halving_defect(system, p, traj.step));
    y.assign(p.begin(), p.end());
    rk.step(system.field, std::span<double>(y), traj.step);
    const auto next = traj.point(i + 1);
    for (std::size_t k = 0; k < system.dim; ++k)
      out.max_replay_error = std::max(out.max_replay_error, std::abs(y[k] - next[k]));
  }
  return out;
}

FastSystem nose_hoover(double temperature) {
  FastSystem s;
  s.name = "nose-hoover";
  s.dim = 3;
  s.field = [temperature](std::span<const double> y, std::span<double> out) {
    const double q = y[0], p = y[1], z = y[2];
    out[0] = p;
    out[1] = -q - z * p;
    out[2] = p * p - temperature;
  };
  s.reversal = AffineMap::diagonal({1.0, -1.0, -1.0});
  s.default_initial = {0.0, 5.0, 0.0};
  s.variables = {"q", "p", "z"};
  return s;
}

FastSystem nose_hoover_pair(double kappa, double alpha, double temperature) {
  FastSystem s;
  s.name = "nose-hoover-pair";
  s.dim = 8;
  // per oscillator (q, p, z, x): Nose-Hoover chain of length two
  s.field = [kappa, alpha, temperature](std::span<const double> y, std::span<double> out) {
    const double c = kappa * (y[0] - y[4]);
    for (int k = 0; k < 2; ++k) {
      const std::size_t o = 4 * static_cast<std::size_t>(k);
      const double q = y[o], p = y[o + 1], z = y[o + 2], x = y[o + 3];
      out[o] = p;
      out[o + 1] = -q - alpha * q * q * q - (k == 0 ? c : -c) - z * p;
      out[o + 2] = p * p - temperature - x * z;
      out[o + 3] = z * z - temperature;
    }
  };
  s.reversal = AffineMap::diagonal({1.0, -1.0, -1.0, -1.0, 1.0, -1.0, -1.0, -1.0});
  s.default_initial = {0.0, 1.0, 0.0, 0.0, 0.3, 1.1, 0.0, 0.0};
  s.burn_in_time = 200.0;
  s.variables = {"q1", "p1", "z1", "x1", "q2", "p2", "z2", "x2"};
  return s;
}

FastSystem harmonic() {
  FastSystem s;
  s.name = "harmonic";
  s.dim = 2;
  s.field = [](std::span<const double> y, std::span<double> out) {
    out[0] = y[1];
    out[1] = -y[0];
  };
  s.reversal = AffineMap::diagonal({1.0, -1.0});
  s.default_initial = {1.0, 0.0};
  s.burn_in_time = 0.0;
  s.variables = {"q", "p"};
  return s;
}

FastSystem lorenz63(double sigma, double rho, double beta) {
  FastSystem s;
  s.name = "lorenz63";
  s.dim = 3;
  s.field = [sigma, rho, beta](std::span<const double> y, std::span<double> out) {
    out[0] = sigma * (y[1] - y[0]);
    out[1] = y[0] * (rho - y[2]) - y[1];
    out[2] = y[0] * y[1] - beta * y[2];
  };
  s.reversal = AffineMap::diagonal({1.0, -1.0, -1.0});
  s.default_initial = {1.0, 1.0, 20.0};
  s.burn_in_time = 100.0;
  s.reversible = false;
  s.variables = {"x", "y", "z"};
  return s;
}

FastSystem null_system(std::size_t m) {
  FastSystem s;
  s.name = "null";
  s.dim = m;
  s.field = [](std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  };
  s.reversal = AffineMap::diagonal(std::vector<double>(m, 1.0));
  s.default_initial.assign(m, 0.0);
  s.burn_in_time = 0.0;
  s.variables.clear();
  for (std::size_t i = 0; i < m; ++i) s.variables.push_back("y" + std::to_string(i + 1));
  return s;
}

}  // namespace levy
