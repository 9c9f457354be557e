#include "levy/green_kubo.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "levy/parallel.hpp"

namespace levy {

namespace {

double inf_norm(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

double min_sym_eigenvalue(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Matrix batch_se(const std::vector<Matrix>& samples) {
  const std::size_t b = samples.size();
  Matrix mean = Matrix::Zero(samples.front().rows(), samples.front().cols());
  for (const auto& s : samples) mean += s;
  mean /= static_cast<double>(b);
  Matrix var = Matrix::Zero(mean.rows(), mean.cols());
  for (const auto& s : samples) var += (s - mean).cwiseAbs2();
  var /= static_cast<double>(b - 1);
  return (var / static_cast<double>(b)).cwiseSqrt();
}

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

Matrix batch_standard_error(const std::vector<Matrix>& per_batch) {
  if (per_batch.size() < 2) throw Error("standard error needs at least two batches");
  return batch_se(per_batch);
}

ObservableSeries observe_series(const Trajectory& traj, const Observable& v) {
  return {observe(traj, v), traj.step};
}

ObservableSeries sample_series(const FastSystem& system, const Observable& v, double duration,
                               double step, std::size_t thin, std::uint64_t seed) {
  if (v.dim_in != system.dim) throw DimensionError("sample_series: observable does not act on this fast system");
  if (thin == 0) throw Error("sample_series: thinning factor must be at least 1");
  if (!(step > 0.0)) throw Error("sample_series: step must be positive");
  const double dt = step * static_cast<double>(thin);
  const auto n = static_cast<std::size_t>(std::floor(duration / dt + 1e-9));
  if (n < 2) throw Error("sample_series: duration too short for two samples");
  std::vector<double> y = draw_stationary(system, step, seed);
  ObservableSeries out;
  out.step = dt;
  out.values.resize(static_cast<Eigen::Index>(v.dim_out), static_cast<Eigen::Index>(n));
  Rk4 rk(system.dim);
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0)
      for (std::size_t s = 0; s < thin; ++s) rk.step(system.field, std::span<double>(y), step);
    if ((k & 255U) == 0 || k + 1 == n)
      for (double x : y)
        if (!std::isfinite(x)) {
          const double t = system.burn_in_time + dt * static_cast<double>(k);
          std::ostringstream os;
          os << "non-finite state at time " << t;
          throw NumericalError(os.str(), t);
        }
    v.eval(y, std::span<double>(out.values.col(static_cast<Eigen::Index>(k)).data(), v.dim_out));
  }
  return out;
}

Correlogram cross_correlogram(const ObservableSeries& a, const ObservableSeries& b,
                              const CorrelogramOptions& opts) {
  if (a.size() != b.size()) throw DimensionError("cross_correlogram: series lengths differ");
  if (a.step != b.step) throw DimensionError("cross_correlogram: series time steps differ");
  if (opts.lag_stride == 0) throw Error("correlogram: lag stride must be at least 1");
  if (opts.batches < 2) throw Error("correlogram: at least two batches are needed for standard errors");
  const std::size_t n = a.size();
  if (n < 2 * opts.batches) throw Error("correlogram: series too short for the batch count");
  if (!(opts.t_max > 0.0)) throw Error("correlogram: t_max must be positive");
  if (!(opts.t_max < a.duration() / 10.0)) {
    std::ostringstream os;
    os << "correlogram: t_max " << opts.t_max << " must be below a tenth of the duration " << a.duration();
    throw Error(os.str());
  }
  const double spacing = a.step * static_cast<double>(opts.lag_stride);
  const auto n_lags = static_cast<std::size_t>(std::floor(opts.t_max / spacing + 1e-9)) + 1;

  Correlogram out;
  out.n_samples = n;
  out.v_mean = a.values.rowwise().mean();
  const Matrix xa = a.values.colwise() - out.v_mean;
  const Vector mean_b = b.values.rowwise().mean();
  const Matrix xb = b.values.colwise() - mean_b;
  for (std::size_t j = 0; j < n_lags; ++j) out.lags.push_back(spacing * static_cast<double>(j));

  const std::size_t nb = opts.batches;
  std::vector<Matrix> sums(nb * n_lags);
  parallel_for(nb * n_lags, opts.threads, [&](std::size_t task) {
    const std::size_t bi = task / n_lags;
    const std::size_t j = task % n_lags;
    const std::size_t k = j * opts.lag_stride;
    const std::size_t s = n * bi / nb;
    const std::size_t e = std::min(n * (bi + 1) / nb, n - k);
    if (e <= s) {
      sums[task] = Matrix::Zero(xa.rows(), xb.rows());
      return;
    }
    const auto len = static_cast<Eigen::Index>(e - s);
    sums[task].noalias() = xa.middleCols(static_cast<Eigen::Index>(s), len) *
                           xb.middleCols(static_cast<Eigen::Index>(s + k), len).transpose();
  });

  out.values.assign(n_lags, Matrix::Zero(xa.rows(), xb.rows()));
  out.batch_values.assign(nb, std::vector<Matrix>(n_lags));
  for (std::size_t bi = 0; bi < nb; ++bi) {
    const double len = static_cast<double>(n * (bi + 1) / nb - n * bi / nb);
    for (std::size_t j = 0; j < n_lags; ++j) {
      const Matrix& s = sums[bi * n_lags + j];
      out.values[j] += s;
      out.batch_values[bi][j] = s / len;
    }
  }
  for (auto& m : out.values) m /= static_cast<double>(n);
  return out;
}

Correlogram correlogram(const ObservableSeries& series, const CorrelogramOptions& opts) {
  return cross_correlogram(series, series, opts);
}

Correlogram correlogram(const Trajectory& traj, const Observable& v, const CorrelogramOptions& opts) {
  if (traj.dim != v.dim_in) throw DimensionError("correlogram: observable dimension does not match the trajectory");
  return correlogram(observe_series(traj, v), opts);
}

Matrix integrate_lags(const std::vector<double>& lags, const std::vector<Matrix>& values) {
  if (lags.size() < 2 || values.size() != lags.size()) throw Error("integration needs at least two lags");
  Matrix acc = Matrix::Zero(values.front().rows(), values.front().cols());
  for (std::size_t k = 0; k + 1 < lags.size(); ++k) acc += 0.5 * (lags[k + 1] - lags[k]) * (values[k] + values[k + 1]);
  return acc;
}

GreenKuboEstimate integrate_estimates(const Correlogram& corr) {
  if (corr.lags.size() < 2) throw Error("integrate_estimates: fewer than two lags");
  if (corr.values.front().rows() != corr.values.front().cols())
    throw DimensionError("integrate_estimates: correlogram is not square");
  GreenKuboEstimate est;
  const Matrix i = integrate_lags(corr.lags, corr.values);
  est.sigma_hat = i + i.transpose();
  est.e_hat = i - i.transpose();
  est.sigma_hat = 0.5 * (est.sigma_hat + est.sigma_hat.transpose()).eval();
  est.e_hat = 0.5 * (est.e_hat - est.e_hat.transpose()).eval();
  est.t_max = corr.lags.back();

  std::vector<Matrix> sig_b, e_b;
  for (const auto& bv : corr.batch_values) {
    const Matrix ib = integrate_lags(corr.lags, bv);
    sig_b.push_back(ib + ib.transpose());
    e_b.push_back(ib - ib.transpose());
  }
  const std::size_t d = static_cast<std::size_t>(i.rows());
  est.batch_sigma = sig_b;
  est.batch_e = e_b;
  if (sig_b.size() >= 2) {
    est.se_sigma = batch_se(sig_b);
    est.se_e = batch_se(e_b);
  } else {
    est.se_sigma = Matrix::Zero(i.rows(), i.cols());
    est.se_e = Matrix::Zero(i.rows(), i.cols());
  }

  auto& dg = est.diagnostics;
  dg.c0_norm = inf_norm(corr.values.front());
  dg.tail_norm = inf_norm(corr.values.back());
  dg.c0_min_eigenvalue = min_sym_eigenvalue(corr.values.front());
  dg.sigma_min_eigenvalue = min_sym_eigenvalue(est.sigma_hat);
  dg.lags = corr.lags.size();
  dg.batches = corr.batch_values.size();
  if (corr.batch_values.size() >= 2 && d > 0) {
    const std::size_t nl = corr.lags.size();
    const std::size_t first = nl - std::max<std::size_t>(1, nl / 5);
    double acc = 0.0;
    for (std::size_t k = first; k < nl; ++k) {
      std::vector<Matrix> at;
      for (const auto& bv : corr.batch_values) at.push_back(bv[k]);
      acc += inf_norm(batch_se(at));
    }
    dg.noise_floor = acc / static_cast<double>(nl - first);
  }
  return est;
}

double choose_t_max(const ObservableSeries& series, double cap, const CorrelogramOptions& opts) {
  CorrelogramOptions probe = opts;
  probe.t_max = std::min(cap, 0.999 * series.duration() / 10.0);
  const Correlogram c = correlogram(series, probe);
  const std::size_t nl = c.lags.size();
  if (nl < 3) return c.lags.back();
  const std::size_t first = nl - std::max<std::size_t>(1, nl / 5);
  double floor = 0.0;
  for (std::size_t k = first; k < nl; ++k) floor += inf_norm(c.values[k]) * inf_norm(c.values[k]);
  floor = std::sqrt(floor / static_cast<double>(nl - first));
  std::size_t cut = nl - 1;
  while (cut > 1 && inf_norm(c.values[cut - 1]) < 2.0 * floor) --cut;
  return c.lags[std::max<std::size_t>(cut, 1)];
}

E0Estimate estimate_e0(const ObservableSeries& series, const EigenSplit& split,
                       const CorrelogramOptions& opts) {
  if (series.dim() != static_cast<std::size_t>(split.dim())) throw DimensionError("estimate_e0: observable dimension does not match the split");
  const auto dp = static_cast<Eigen::Index>(split.d_plus);
  const auto dm = static_cast<Eigen::Index>(split.d_minus);
  E0Estimate out;
  if (dp == 0 || dm == 0) {
    out.e0 = Matrix::Zero(dp, dm);
    out.se = Matrix::Zero(dp, dm);
    return out;
  }
  const Matrix w = split.basis_inverse * series.values;
  const ObservableSeries plus{w.topRows(dp), series.step};
  const ObservableSeries minus{w.bottomRows(dm), series.step};
  const Correlogram c = cross_correlogram(plus, minus, opts);
  out.e0 = 2.0 * integrate_lags(c.lags, c.values);
  std::vector<Matrix> per_batch;
  for (const auto& bv : c.batch_values) per_batch.push_back(2.0 * integrate_lags(c.lags, bv));
  out.se = batch_se(per_batch);
  out.batches = std::move(per_batch);
  return out;
}

E0Estimate estimate_e0(const Trajectory& traj, const Observable& v, const AffineMap& reversal,
                       const EigenSplit& split, const CorrelogramOptions& opts, double tol) {
  if (traj.dim != v.dim_in) throw DimensionError("estimate_e0: observable dimension does not match the trajectory");
  Trajectory probe;
  probe.dim = traj.dim;
  const std::size_t count = std::min<std::size_t>(256, traj.size());
  for (std::size_t i = 0; i < count; ++i) {
    const auto p = traj.point(i * traj.size() / count);
    probe.data.insert(probe.data.end(), p.begin(), p.end());
  }
  require_equivariance(v, reversal, split.pi_plus - split.pi_minus, probe, tol, "estimate_e0");
  return estimate_e0(observe_series(traj, v), split, opts);
}

std::string estimate_json(const GreenKuboEstimate& est) {
  nlohmann::json j;
  j["sigma_hat"] = matrix_json(est.sigma_hat);
  j["e_hat"] = matrix_json(est.e_hat);
  j["se_sigma"] = matrix_json(est.se_sigma);
  j["se_e"] = matrix_json(est.se_e);
  j["t_max"] = est.t_max;
  const auto& d = est.diagnostics;
  j["diagnostics"] = {{"c0_norm", d.c0_norm},
                      {"tail_norm", d.tail_norm},
                      {"noise_floor", d.noise_floor},
                      {"c0_min_eigenvalue", d.c0_min_eigenvalue},
                      {"sigma_min_eigenvalue", d.sigma_min_eigenvalue},
                      {"lags", d.lags},
                      {"batches", d.batches}};
  return j.dump(2);
}

void write_correlogram_csv(const std::string& path, const Correlogram& corr) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write correlogram file '" + path + "'");
  out << "lag";
  if (!corr.values.empty())
    for (Eigen::Index r = 0; r < corr.values.front().rows(); ++r)
      for (Eigen::Index c = 0; c < corr.values.front().cols(); ++c) out << ",c" << r + 1 << '_' << c + 1;
  out << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < corr.lags.size(); ++k) {
    out << corr.lags[k];
    const Matrix& m = corr.values[k];
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << m(r, c);
    out << '\n';
  }
}

}  // namespace levy
