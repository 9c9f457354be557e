#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "levy/fast_system.hpp"
#include "levy/observable.hpp"
#include "levy/symmetry.hpp"

namespace levy {

/// Observable values along an equally spaced trajectory (column k at time k * step).
struct ObservableSeries {
  Matrix values;
  double step = 0.0;

  std::size_t size() const noexcept { return static_cast<std::size_t>(values.cols()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(values.rows()); }
  double duration() const noexcept { return size() > 1 ? step * static_cast<double>(size() - 1) : 0.0; }
};

ObservableSeries observe_series(const Trajectory& traj, const Observable& v);

/// Integrates the fast system from a stationary start and records v every
/// `thin` integration steps, without keeping the trajectory.
ObservableSeries sample_series(const FastSystem& system, const Observable& v, double duration,
                               double step, std::size_t thin, std::uint64_t seed);

struct CorrelogramOptions {
  double t_max = 0.0;
  // lags are multiples of lag_stride samples
  std::size_t lag_stride = 1;
  std::size_t batches = 20;
  std::size_t threads = 1;
};

struct Correlogram {
  std::vector<double> lags;
  std::vector<Matrix> values;
  std::size_t n_samples = 0;
  Vector v_mean;
  // same lags, one correlogram per batch of start indices
  std::vector<std::vector<Matrix>> batch_values;
};

/// C(t_k) = (1/N) sum_i (v_i - mean) (v_{i+k} - mean)^T for t_k <= t_max.
Correlogram correlogram(const ObservableSeries& series, const CorrelogramOptions& opts);
Correlogram correlogram(const Trajectory& traj, const Observable& v, const CorrelogramOptions& opts);

/// Cross version: rows from `a`, lagged columns from `b`; both share the time grid.
Correlogram cross_correlogram(const ObservableSeries& a, const ObservableSeries& b,
                              const CorrelogramOptions& opts);

struct DecayDiagnostics {
  double c0_norm = 0.0;
  double tail_norm = 0.0;    // |C(t_max)|_inf
  double noise_floor = 0.0;  // batch spread of C near t_max
  double c0_min_eigenvalue = 0.0;
  double sigma_min_eigenvalue = 0.0;
  std::size_t lags = 0;
  std::size_t batches = 0;
};

struct GreenKuboEstimate {
  Matrix sigma_hat;
  Matrix e_hat;
  double t_max = 0.0;
  Matrix se_sigma;
  Matrix se_e;
  // per-batch integrals, for standard errors of derived quantities
  std::vector<Matrix> batch_sigma;
  std::vector<Matrix> batch_e;
  DecayDiagnostics diagnostics;
};

GreenKuboEstimate integrate_estimates(const Correlogram& corr);

/// Batch-means standard error of a set of per-batch matrices.
Matrix batch_standard_error(const std::vector<Matrix>& per_batch);

/// Trapezoid integral over the lag grid.
Matrix integrate_lags(const std::vector<double>& lags, const std::vector<Matrix>& values);

/// Smallest lag after which |C(t)|_inf stays below 2x the noise floor of
/// the last 20% of a probe correlogram out to `cap`.
double choose_t_max(const ObservableSeries& series, double cap, const CorrelogramOptions& opts);

struct E0Estimate {
  Matrix e0;
  Matrix se;
  std::vector<Matrix> batches;
};

/// Twice the integrated cross-correlation of v+ against lagged v-, in
/// split-basis coordinates.
E0Estimate estimate_e0(const ObservableSeries& series, const EigenSplit& split,
                       const CorrelogramOptions& opts);
/// Checks v(Ry) = A v(y) on trajectory samples first (SymmetryError on failure).
E0Estimate estimate_e0(const Trajectory& traj, const Observable& v, const AffineMap& reversal,
                       const EigenSplit& split, const CorrelogramOptions& opts, double tol = 1e-8);

std::string estimate_json(const GreenKuboEstimate& est);
/// Columns: lag, then row-major matrix entries.
void write_correlogram_csv(const std::string& path, const Correlogram& corr);

}  // namespace levy
