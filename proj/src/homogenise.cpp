#include "levy/homogenise.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "levy/parallel.hpp"
#include "levy/random.hpp"

namespace levy {

namespace {

void check_dim(const SlowField& slow, std::size_t n, const char* what) {
  if (n != slow.dim) throw DimensionError(std::string(what) + ": slow state has wrong dimension");
}

Matrix diag_matrix(const std::vector<double>& d) {
  const auto n = static_cast<Eigen::Index>(d.size());
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index k = 0; k < n; ++k) m(k, k) = d[static_cast<std::size_t>(k)];
  return m;
}

// b(x) into a row-major d x d buffer.
void eval_b(const SlowField& slow, std::span<const double> x, std::span<double> out) {
  if (slow.b) {
    slow.b(x, out);
  } else {
    std::fill(out.begin(), out.end(), 0.0);
  }
}

void eval_a(const SlowField& slow, std::span<const double> x, std::span<double> out) {
  if (slow.a) {
    slow.a(x, out);
  } else {
    std::fill(out.begin(), out.end(), 0.0);
  }
}

void b_jacobian(const SlowField& slow, std::span<const double> x, std::span<double> out) {
  const std::size_t d = slow.dim;
  if (slow.b_jacobian) {
    slow.b_jacobian(x, out);
    return;
  }
  std::vector<double> xp(x.begin(), x.end()), bp(d * d), bm(d * d);
  for (std::size_t a = 0; a < d; ++a) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[a]));
    xp[a] = x[a] + h;
    eval_b(slow, xp, bp);
    xp[a] = x[a] - h;
    eval_b(slow, xp, bm);
    xp[a] = x[a];
    for (std::size_t k = 0; k < d * d; ++k) out[a * d * d + k] = (bp[k] - bm[k]) / (2.0 * h);
  }
}

void correction_into(const SlowField& slow, const Matrix& e, std::span<const double> x, std::span<double> out,
                     std::vector<double>& bbuf, std::vector<double>& jbuf) {
  const std::size_t d = slow.dim;
  eval_b(slow, x, bbuf);
  b_jacobian(slow, x, jbuf);
  for (std::size_t k = 0; k < d; ++k) {
    double acc = 0.0;
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) {
        const double db = jbuf[(a * d + k) * d + b];
        if (db == 0.0) continue;
        for (std::size_t g = 0; g < d; ++g)
          acc += e(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(b)) * db * bbuf[a * d + g];
      }
    out[k] = 0.5 * acc;
  }
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

SlowField section6_field(std::size_t d, const std::vector<std::size_t>& fixed, std::size_t i, std::size_t j) {
  if (d < 2) throw DimensionError("section6_field: d must be at least 2");
  auto in_b = [&](std::size_t k) { return std::find(fixed.begin(), fixed.end(), k) != fixed.end(); };
  for (std::size_t k : fixed)
    if (k < 1 || k > d) throw DimensionError("section6_field: B contains an index outside 1..d");
  if (i < 1 || i > d || j < 1 || j > d) throw DimensionError("section6_field: i and j must lie in 1..d");
  if (!in_b(i) || in_b(j)) throw StructuralError("section6_field: need i in B and j outside B");
  SlowField s;
  s.name = "section6";
  s.dim = d;
  std::vector<double> sd(d), ad(d, 1.0);
  for (std::size_t k = 0; k < d; ++k) sd[k] = in_b(k + 1) ? 1.0 : -1.0;
  ad[d - 1] = -1.0;
  s.s = diag_matrix(sd);
  s.a_matrix = diag_matrix(ad);
  const std::size_t ii = i - 1, jj = j - 1;
  s.a = [](std::span<const double>, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
  s.b = [d, ii, jj](std::span<const double> x, std::span<double> out) {
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d * d), 0.0);
    out[ii * d + (d - 1)] = x[ii];
    out[jj * d] += x[ii];
  };
  s.b_jacobian = [d, ii, jj](std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d * d * d), 0.0);
    out[(ii * d + ii) * d + (d - 1)] = 1.0;
    out[(ii * d + jj) * d] += 1.0;
  };
  return s;
}

SlowField additive_field(std::size_t d) { return constant_field(Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))); }

SlowField constant_field(const Matrix& c) {
  if (c.rows() != c.cols()) throw DimensionError("constant_field: b must be square");
  SlowField s;
  s.name = "constant";
  s.dim = static_cast<std::size_t>(c.rows());
  const std::size_t d = s.dim;
  s.a = [](std::span<const double>, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
  s.b = [c, d](std::span<const double>, std::span<double> out) {
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t l = 0; l < d; ++l) out[k * d + l] = c(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l));
  };
  s.b_jacobian = [d](std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d * d * d), 0.0);
  };
  s.s = Matrix::Identity(c.rows(), c.rows());
  s.a_matrix = Matrix::Identity(c.rows(), c.rows());
  s.reversible = false;
  return s;
}

SlowField with_linear_drift(SlowField slow, const Matrix& m) {
  if (m.rows() != static_cast<Eigen::Index>(slow.dim) || m.cols() != m.rows())
    throw DimensionError("with_linear_drift: drift matrix must be d x d");
  const std::size_t d = slow.dim;
  slow.a = [m, d](std::span<const double> x, std::span<double> out) {
    for (std::size_t k = 0; k < d; ++k) {
      double acc = 0.0;
      for (std::size_t l = 0; l < d; ++l) acc += m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) * x[l];
      out[k] = acc;
    }
  };
  return slow;
}

std::vector<std::vector<double>> default_slow_probes(std::size_t d, std::size_t count, std::uint64_t seed) {
  const CounterRng rng(seed, 7);
  std::vector<std::vector<double>> out(count, std::vector<double>(d));
  std::uint64_t c = 0;
  for (auto& p : out)
    for (auto& x : p) x = 2.0 * rng.normal(c++);
  return out;
}

SlowResiduals slow_residuals(const SlowField& slow, const std::vector<std::vector<double>>& probes) {
  const std::size_t d = slow.dim;
  if (slow.s.rows() != static_cast<Eigen::Index>(d) || slow.a_matrix.rows() != static_cast<Eigen::Index>(d))
    throw DimensionError("slow_residuals: S and A must be d x d");
  SlowResiduals r;
  std::vector<double> sx(d), ax(d), asx(d), bx(d * d), bsx(d * d);
  for (const auto& x : probes) {
    check_dim(slow, x.size(), "slow_residuals");
    for (std::size_t k = 0; k < d; ++k) {
      double acc = 0.0;
      for (std::size_t l = 0; l < d; ++l) acc += slow.s(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) * x[l];
      sx[k] = acc;
    }
    eval_a(slow, x, ax);
    eval_a(slow, sx, asx);
    eval_b(slow, x, bx);
    eval_b(slow, sx, bsx);
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> bm(bx.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> bsm(bsx.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    const Eigen::Map<const Vector> av(ax.data(), static_cast<Eigen::Index>(d));
    const Eigen::Map<const Vector> asv(asx.data(), static_cast<Eigen::Index>(d));
    r.a = std::max(r.a, (asv + slow.s * av).cwiseAbs().maxCoeff());
    r.b = std::max(r.b, (bsm + slow.s * bm * slow.a_matrix).cwiseAbs().maxCoeff());
    r.scale = std::max({r.scale, av.cwiseAbs().maxCoeff(), bm.cwiseAbs().maxCoeff()});
  }
  return r;
}

Vector drift_correction(const SlowField& slow, const Matrix& e, std::span<const double> x) {
  check_dim(slow, x.size(), "drift_correction");
  if (e.rows() != static_cast<Eigen::Index>(slow.dim) || e.cols() != e.rows())
    throw DimensionError("drift_correction: E must be d x d");
  if (skew_defect(e) > 1e-12 * std::max(1.0, e.cwiseAbs().maxCoeff()))
    throw StructuralError("drift_correction: E is not skew-symmetric");
  const std::size_t d = slow.dim;
  std::vector<double> bbuf(d * d), jbuf(d * d * d);
  Vector out(static_cast<Eigen::Index>(d));
  correction_into(slow, e, x, std::span<double>(out.data(), d), bbuf, jbuf);
  return out;
}

FastSlowPath simulate_fast_slow(const FastSlowRun& run, std::uint64_t seed, std::span<const double> initial) {
  const FastSystem& fast = run.fast;
  const SlowField& slow = run.slow;
  const std::size_t m = fast.dim;
  const std::size_t d = slow.dim;
  if (!(run.epsilon > 0.0) || !(run.epsilon < 1.0)) throw Error("simulate_fast_slow: epsilon must lie in (0, 1)");
  if (!(run.step_fast > 0.0) || run.step_fast > 0.01 + 1e-15)
    throw Error("simulate_fast_slow: the fast step must lie in (0, 0.01]");
  if (run.coupling.dim_in != m || run.coupling.dim_out != d)
    throw DimensionError("simulate_fast_slow: coupling must map the fast state to R^d");
  check_dim(slow, run.xi.size(), "simulate_fast_slow");

  const double eps = run.epsilon;
  const double eps2 = eps * eps;
  std::vector<double> vbuf(d), bbuf(d * d), abuf(d);
  const auto& g = fast.field;
  const auto& v = run.coupling.eval;
  auto field = [&](std::span<const double> s, std::span<double> out) {
    const auto y = s.subspan(0, m);
    const auto x = s.subspan(m, d);
    g(y, out.subspan(0, m));
    v(y, vbuf);
    eval_b(slow, x, bbuf);
    eval_a(slow, x, abuf);
    for (std::size_t k = 0; k < d; ++k) {
      double acc = 0.0;
      for (std::size_t l = 0; l < d; ++l) acc += bbuf[k * d + l] * vbuf[l];
      out[m + k] = eps2 * abuf[k] + eps * acc;
    }
  };

  std::vector<double> state(m + d);
  if (!initial.empty() && initial.size() != m) throw DimensionError("simulate_fast_slow: initial fast state has the wrong size");
  const std::vector<double> y0 = !initial.empty() ? std::vector<double>(initial.begin(), initial.end())
                                 : run.cold_start ? jittered_initial(fast, seed)
                                                  : draw_stationary(fast, run.step_fast, seed);
  std::copy(y0.begin(), y0.end(), state.begin());
  std::copy(run.xi.begin(), run.xi.end(), state.begin() + static_cast<std::ptrdiff_t>(m));

  const double duration = run.horizon / eps2;
  const std::size_t n = step_count(duration, run.step_fast);
  const double h = duration / static_cast<double>(n);
  Rk4 rk(m + d);
  FastSlowPath path;
  const std::size_t check_every = run.spot_checks ? std::max<std::size_t>(1, n / (run.spot_checks + 1)) : 0;
  const std::size_t record_every = run.record_points ? std::max<std::size_t>(1, n / run.record_points) : 0;
  auto record = [&](std::size_t k) {
    path.times.push_back(eps2 * h * static_cast<double>(k));
    path.path.emplace_back(state.begin() + static_cast<std::ptrdiff_t>(m), state.end());
  };
  if (record_every) record(0);
  std::vector<double> a_full(m + d), b_half(m + d);
  for (std::size_t k = 0; k < n; ++k) {
    if (check_every && k > 0 && k % check_every == 0) {
      a_full = state;
      b_half = state;
      rk.step(field, std::span<double>(a_full), h);
      rk.step(field, std::span<double>(b_half), 0.5 * h);
      rk.step(field, std::span<double>(b_half), 0.5 * h);
      double defect = 0.0, scale = 1.0;
      for (std::size_t c = 0; c < m + d; ++c) {
        defect = std::max(defect, std::abs(a_full[c] - b_half[c]));
        scale = std::max(scale, std::abs(b_half[c]));
      }
      path.max_spot_defect = std::max(path.max_spot_defect, defect / scale);
      if (defect > run.spot_tolerance * scale) {
        std::ostringstream os;
        os << "simulate_fast_slow: step-halving defect " << defect << " exceeds tolerance; reduce the fast step";
        throw NumericalError(os.str(), eps2 * h * static_cast<double>(k));
      }
    }
    rk.step(field, std::span<double>(state), h);
    if ((k & 1023U) == 0 || k + 1 == n)
      for (double s : state)
        if (!std::isfinite(s)) {
          const double t = eps2 * h * static_cast<double>(k + 1);
          std::ostringstream os;
          os << "simulate_fast_slow: non-finite state at slow time " << t;
          throw NumericalError(os.str(), t);
        }
    if (record_every && (k + 1) % record_every == 0) record(k + 1);
  }
  path.terminal.assign(state.begin() + static_cast<std::ptrdiff_t>(m), state.end());
  return path;
}

std::vector<double> simulate_fast_slow_ou(const OUSurrogate& ou, const Matrix& v, const SlowField& slow,
                                          double epsilon, std::span<const double> xi, double horizon,
                                          double step_fast, std::uint64_t seed) {
  const Eigen::Index m = ou.gamma.rows();
  const auto d = static_cast<Eigen::Index>(slow.dim);
  if (v.rows() != d || v.cols() != m) throw DimensionError("simulate_fast_slow_ou: V must be d x m");
  check_dim(slow, xi.size(), "simulate_fast_slow_ou");
  const Matrix phi = (-step_fast * ou.gamma).exp();
  const Matrix q = ou.stationary_cov - phi * ou.stationary_cov * phi.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (q + q.transpose()));
  const Matrix root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  Eigen::LLT<Matrix> llt(ou.stationary_cov);
  const CounterRng rng(seed, 8);
  std::uint64_t c = 0;
  Vector z(m);
  for (Eigen::Index k = 0; k < m; ++k) z(k) = rng.normal(c++);
  Vector y = llt.matrixL() * z;
  Vector ynext(m);
  const double eps = epsilon, eps2 = epsilon * epsilon;
  const std::size_t n = step_count(horizon / eps2, step_fast);
  const double h = horizon / eps2 / static_cast<double>(n);
  const std::size_t du = slow.dim;
  std::vector<double> x(xi.begin(), xi.end()), xt(du), b0(du * du), b1(du * du), a0(du), a1(du);
  for (std::size_t k = 0; k < n; ++k) {
    for (Eigen::Index r = 0; r < m; ++r) z(r) = rng.normal(c++);
    ynext.noalias() = phi * y + root * z;
    const Vector v0 = v * y;
    const Vector v1 = v * ynext;
    eval_b(slow, x, b0);
    eval_a(slow, x, a0);
    for (std::size_t r = 0; r < du; ++r) {
      double acc = 0.0;
      for (std::size_t l = 0; l < du; ++l) acc += b0[r * du + l] * v0(static_cast<Eigen::Index>(l));
      xt[r] = x[r] + h * (eps2 * a0[r] + eps * acc);
    }
    eval_b(slow, xt, b1);
    eval_a(slow, xt, a1);
    for (std::size_t r = 0; r < du; ++r) {
      double acc0 = 0.0, acc1 = 0.0;
      for (std::size_t l = 0; l < du; ++l) {
        acc0 += b0[r * du + l] * v0(static_cast<Eigen::Index>(l));
        acc1 += b1[r * du + l] * v1(static_cast<Eigen::Index>(l));
      }
      x[r] += 0.5 * h * (eps2 * (a0[r] + a1[r]) + eps * (acc0 + acc1));
    }
    y.swap(ynext);
  }
  return x;
}

SdeModel make_sde(const SlowField& slow, const Matrix& sigma, const Matrix& e, double floor) {
  const auto d = static_cast<Eigen::Index>(slow.dim);
  if (sigma.rows() != d || sigma.cols() != d || e.rows() != d || e.cols() != d)
    throw DimensionError("make_sde: Sigma and E must be d x d");
  if (skew_defect(e) > 1e-10 * std::max(1.0, e.cwiseAbs().maxCoeff()))
    throw StructuralError("make_sde: E is not skew-symmetric");
  if (symmetry_defect(sigma) > 1e-10 * std::max(1.0, sigma.cwiseAbs().maxCoeff()))
    throw StructuralError("make_sde: Sigma is not symmetric");
  SdeModel model;
  model.slow = slow;
  model.sigma = 0.5 * (sigma + sigma.transpose());
  model.e = 0.5 * (e - e.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(model.sigma);
  model.min_eigenvalue = es.eigenvalues().minCoeff();
  if (model.min_eigenvalue < -floor * std::max(1.0, model.sigma.cwiseAbs().maxCoeff())) {
    std::ostringstream os;
    os << "make_sde: Sigma has eigenvalue " << model.min_eigenvalue << " below the PSD floor";
    throw StructuralError(os.str());
  }
  model.floored = model.min_eigenvalue < 0.0;
  model.sqrt_sigma = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  return model;
}

std::vector<double> simulate_sde(const SdeModel& model, std::span<const double> xi, double horizon, double step,
                                 std::uint64_t seed) {
  const SlowField& slow = model.slow;
  check_dim(slow, xi.size(), "simulate_sde");
  if (!(step > 0.0)) throw Error("simulate_sde: step must be positive");
  const std::size_t d = slow.dim;
  const std::size_t n = step_count(horizon, step);
  const double h = horizon / static_cast<double>(n);
  const double sqh = std::sqrt(h);
  const CounterRng rng(seed, 6);
  std::vector<double> x(xi.begin(), xi.end()), xt(d), z(d), dw(d), drift0(d), drift1(d), corr(d), b0(d * d),
      b1(d * d), bb(d * d), jb(d * d * d);
  const bool has_e = model.e.cwiseAbs().maxCoeff() > 0.0;
  auto drift = [&](std::span<const double> at, std::span<double> out) {
    eval_a(slow, at, out);
    if (has_e) {
      correction_into(slow, model.e, at, corr, bb, jb);
      for (std::size_t k = 0; k < d; ++k) out[k] += corr[k];
    }
  };
  std::uint64_t c = 0;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t r = 0; r < d; ++r) z[r] = rng.normal(c++);
    for (std::size_t r = 0; r < d; ++r) {
      double acc = 0.0;
      for (std::size_t l = 0; l < d; ++l) acc += model.sqrt_sigma(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(l)) * z[l];
      dw[r] = sqh * acc;
    }
    drift(x, drift0);
    eval_b(slow, x, b0);
    for (std::size_t r = 0; r < d; ++r) {
      double acc = 0.0;
      for (std::size_t l = 0; l < d; ++l) acc += b0[r * d + l] * dw[l];
      xt[r] = x[r] + drift0[r] * h + acc;
    }
    drift(xt, drift1);
    eval_b(slow, xt, b1);
    for (std::size_t r = 0; r < d; ++r) {
      double acc = 0.0;
      for (std::size_t l = 0; l < d; ++l) acc += (b0[r * d + l] + b1[r * d + l]) * dw[l];
      x[r] += 0.5 * (drift0[r] + drift1[r]) * h + 0.5 * acc;
    }
    if ((k & 1023U) == 0 || k + 1 == n)
      for (double s : x)
        if (!std::isfinite(s)) throw NumericalError("simulate_sde: non-finite state", h * static_cast<double>(k + 1));
  }
  return x;
}

std::vector<double> simulate_sde(const SlowField& slow, const Matrix& sigma, const Matrix& e,
                                 std::span<const double> xi, double horizon, double step, std::uint64_t seed) {
  return simulate_sde(make_sde(slow, sigma, e), xi, horizon, step, seed);
}

Vector EnsembleLaw::mean() const { return samples.colwise().mean().transpose(); }

Matrix EnsembleLaw::covariance() const {
  const Matrix centered = samples.rowwise() - samples.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
}

std::vector<std::vector<double>> draw_initial_states(const FastSlowRun& run, std::size_t members,
                                                     std::uint64_t base_seed, std::size_t threads) {
  std::vector<std::vector<double>> out(members);
  parallel_for(members, threads, [&](std::size_t i) {
    out[i] = run.cold_start ? jittered_initial(run.fast, base_seed + i) : draw_stationary(run.fast, run.step_fast, base_seed + i);
  });
  return out;
}

EnsembleLaw ensemble_fast_slow(const FastSlowRun& run, std::size_t members, std::uint64_t base_seed,
                               std::size_t threads, const std::string& label,
                               const std::vector<std::vector<double>>* initial) {
  if (initial && initial->size() != members) throw DimensionError("ensemble_fast_slow: one initial state per member");
  EnsembleLaw law;
  law.label = label.empty() ? "fast-slow" : label;
  law.base_seed = base_seed;
  law.samples.resize(static_cast<Eigen::Index>(members), static_cast<Eigen::Index>(run.slow.dim));
  for (std::size_t i = 0; i < members; ++i) law.seeds.push_back(base_seed + i);
  parallel_for(members, threads, [&](std::size_t i) {
    const auto path = initial ? simulate_fast_slow(run, base_seed + i, (*initial)[i]) : simulate_fast_slow(run, base_seed + i);
    for (std::size_t k = 0; k < run.slow.dim; ++k)
      law.samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = path.terminal[k];
  });
  return law;
}

EnsembleLaw ensemble_sde(const SdeModel& model, std::span<const double> xi, double horizon, double step,
                         std::size_t members, std::uint64_t base_seed, std::size_t threads, const std::string& label) {
  EnsembleLaw law;
  law.label = label;
  law.base_seed = base_seed;
  law.samples.resize(static_cast<Eigen::Index>(members), static_cast<Eigen::Index>(model.slow.dim));
  for (std::size_t i = 0; i < members; ++i) law.seeds.push_back(base_seed + i);
  const std::vector<double> x0(xi.begin(), xi.end());
  parallel_for(members, threads, [&](std::size_t i) {
    const auto x = simulate_sde(model, x0, horizon, step, base_seed + i);
    for (std::size_t k = 0; k < model.slow.dim; ++k)
      law.samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = x[k];
  });
  return law;
}

double ks_q(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0, sign = 1.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-16 * std::abs(sum)) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = na * nb / (na + nb);
  const double sq = std::sqrt(ne);
  return {d, ks_q((sq + 0.12 + 0.11 / sq) * d)};
}

LawComparison compare_laws(const EnsembleLaw& lhs, const EnsembleLaw& rhs, const CompareThresholds& th) {
  if (lhs.dim() != rhs.dim()) throw DimensionError("compare_laws: ensembles have different dimensions");
  if (lhs.size() < 2 || rhs.size() < 2) throw Error("compare_laws: each ensemble needs at least two members");
  const std::size_t d = lhs.dim();
  const double n1 = static_cast<double>(lhs.size());
  const double n2 = static_cast<double>(rhs.size());
  LawComparison out;
  const Vector m1 = lhs.mean(), m2 = rhs.mean();
  const Matrix c1 = lhs.covariance(), c2 = rhs.covariance();
  for (std::size_t k = 0; k < d; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    ComponentComparison cc;
    cc.mean_diff = m1(kk) - m2(kk);
    cc.pooled_se = std::sqrt(c1(kk, kk) / n1 + c2(kk, kk) / n2);
    std::vector<double> a(lhs.samples.col(kk).data(), lhs.samples.col(kk).data() + lhs.size());
    std::vector<double> b(rhs.samples.col(kk).data(), rhs.samples.col(kk).data() + rhs.size());
    const KsResult ks = ks_two_sample(std::move(a), std::move(b));
    cc.ks_statistic = ks.statistic;
    cc.ks_p = ks.p_value;
    cc.mean_ok = std::abs(cc.mean_diff) <= th.mean_se * cc.pooled_se;
    cc.ks_ok = cc.ks_p >= th.ks_p_floor;
    if (!cc.mean_ok || !cc.ks_ok) {
      out.passed = false;
      out.failing.push_back(k);
    }
    out.components.push_back(cc);
  }
  out.cov_diff = c1 - c2;
  // standard error of each sample covariance entry from the spread of centered products
  auto cov_var = [](const Matrix& x) {
    const Matrix c = x.rowwise() - x.colwise().mean();
    const auto d2 = c.cols();
    Matrix var(d2, d2);
    for (Eigen::Index r = 0; r < d2; ++r)
      for (Eigen::Index s = 0; s < d2; ++s) {
        const Vector prod = c.col(r).cwiseProduct(c.col(s));
        const double mean = prod.mean();
        var(r, s) = (prod.array() - mean).square().sum() / static_cast<double>(c.rows() - 1) / static_cast<double>(c.rows());
      }
    return var;
  };
  out.cov_se = (cov_var(lhs.samples) + cov_var(rhs.samples)).cwiseSqrt();
  return out;
}

std::string comparison_json(const LawComparison& c, const std::string& lhs, const std::string& rhs) {
  nlohmann::json j;
  j["lhs"] = lhs;
  j["rhs"] = rhs;
  j["passed"] = c.passed;
  j["failing_components"] = c.failing;
  nlohmann::json comps = nlohmann::json::array();
  for (std::size_t k = 0; k < c.components.size(); ++k) {
    const auto& cc = c.components[k];
    comps.push_back({{"component", k + 1},
                     {"mean_diff", cc.mean_diff},
                     {"pooled_se", cc.pooled_se},
                     {"ks_statistic", cc.ks_statistic},
                     {"ks_p", cc.ks_p},
                     {"mean_ok", cc.mean_ok},
                     {"ks_ok", cc.ks_ok}});
  }
  j["components"] = comps;
  j["cov_diff"] = matrix_json(c.cov_diff);
  j["cov_se"] = matrix_json(c.cov_se);
  return j.dump(2);
}

void write_ensemble_csv(const std::string& path, const EnsembleLaw& law) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write ensemble file '" + path + "'");
  out << "seed";
  for (std::size_t k = 0; k < law.dim(); ++k) out << ",x" << k + 1;
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < law.size(); ++i) {
    out << law.seeds[i];
    for (std::size_t k = 0; k < law.dim(); ++k) out << ',' << law.samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    out << '\n';
  }
}

}  // namespace levy
