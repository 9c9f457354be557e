#include "levy/construct.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "levy/random.hpp"

namespace levy {

namespace {

// Streaming mean and centered scatter of the symmetrized generators.
class GramStats {
public:
  GramStats(const std::vector<Polynomial>& gens, const AffineMap& reversal)
      : gens_(gens), reversal_(reversal), mean_(Vector::Zero(static_cast<Eigen::Index>(gens.size()))),
        scatter_(Matrix::Zero(mean_.size(), mean_.size())), chunk_(mean_.size(), kChunk),
        ry_(reversal.dim()) {}

  void add(std::span<const double> y) {
    reversal_.apply(y, ry_);
    for (std::size_t k = 0; k < gens_.size(); ++k)
      chunk_(static_cast<Eigen::Index>(k), fill_) = 0.5 * (gens_[k](y) + gens_[k](ry_));
    if (++fill_ == kChunk) flush();
  }

  void flush() {
    if (fill_ == 0) return;
    const auto x = chunk_.leftCols(fill_);
    const Vector cm = x.rowwise().mean();
    const Matrix centered = x.colwise() - cm;
    const double nc = static_cast<double>(fill_);
    const double n = static_cast<double>(count_);
    const Vector delta = cm - mean_;
    mean_ += delta * (nc / (n + nc));
    scatter_ += centered * centered.transpose() + delta * delta.transpose() * (n * nc / (n + nc));
    count_ += static_cast<std::size_t>(fill_);
    fill_ = 0;
  }

  std::size_t count() const noexcept { return count_; }
  const Vector& mean() const noexcept { return mean_; }
  Matrix gram() const { return scatter_ / static_cast<double>(count_); }

private:
  static constexpr Eigen::Index kChunk = 4096;
  const std::vector<Polynomial>& gens_;
  const AffineMap& reversal_;
  Vector mean_;
  Matrix scatter_;
  Matrix chunk_;
  Eigen::Index fill_ = 0;
  std::size_t count_ = 0;
  std::vector<double> ry_;
};

InvariantBasis finish_basis(const FastSystem& system, const GramStats& stats,
                            const std::vector<Polynomial>& generators, std::size_t count,
                            const BasisOptions& opts) {
  if (stats.count() < 2) throw Error("build_invariant_basis: calibration run has fewer than two states");
  const Matrix g = stats.gram();
  const double diag_scale = std::max(1e-300, g.diagonal().maxCoeff());
  std::vector<Vector> rows;
  std::size_t used = 0;
  for (std::size_t k = 0; k < generators.size() && rows.size() < count; ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    Vector c = Vector::Zero(g.rows());
    c(ki) = 1.0;
    const double gkk = g(ki, ki);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& r : rows) c -= r.dot(g * c) * r;
    const double norm2 = c.dot(g * c);
    if (!(gkk > 1e-14 * diag_scale) || !(norm2 > opts.collapse_tolerance * gkk)) {
      if (opts.skip_collapsed) continue;
      std::ostringstream os;
      os << "build_invariant_basis: generator " << k << " (" << generators[k].to_string(system.variables)
         << ") is dependent on the previous ones along the calibration run";
      throw RankError(os.str(), k);
    }
    rows.push_back(c / std::sqrt(norm2));
    used = k + 1;
  }
  if (rows.size() < count) {
    std::ostringstream os;
    os << "build_invariant_basis: only " << rows.size() << " independent functions among "
       << generators.size() << " generators";
    throw RankError(os.str(), generators.size());
  }

  InvariantBasis basis;
  basis.count = count;
  basis.generators.assign(generators.begin(), generators.begin() + static_cast<std::ptrdiff_t>(used));
  const auto nu = static_cast<Eigen::Index>(used);
  basis.coefficients.resize(static_cast<Eigen::Index>(count), nu);
  for (std::size_t j = 0; j < count; ++j) basis.coefficients.row(static_cast<Eigen::Index>(j)) = rows[j].head(nu).transpose();
  const Vector mu = stats.mean().head(nu);
  basis.offset = -basis.coefficients * mu;
  const Matrix gg = g.topLeftCorner(nu, nu);
  const Matrix ortho = basis.coefficients * gg * basis.coefficients.transpose();
  basis.gram_residual = (ortho - Matrix::Identity(ortho.rows(), ortho.cols())).cwiseAbs().maxCoeff();
  basis.mean_residual = (basis.coefficients * mu + basis.offset).cwiseAbs().maxCoeff();

  auto node = std::make_shared<ObservableNode>();
  node->kind = ObservableNode::Kind::basis;
  node->polys = basis.generators;
  node->matrix = basis.coefficients;
  node->offset = basis.offset;
  node->reversal = system.reversal;
  basis.functions = build_observable(node, system);
  basis.functions.equivariance = Matrix::Identity(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(count));
  return basis;
}

void check_pool(const FastSystem& system, const std::vector<Polynomial>& generators, std::size_t count) {
  if (count == 0) throw DimensionError("build_invariant_basis: count must be positive");
  if (count > generators.size()) throw DimensionError("build_invariant_basis: count exceeds the number of generators");
  for (const auto& p : generators)
    if (p.dim() != system.dim) throw DimensionError("build_invariant_basis: generator dimension does not match the system");
}

Matrix split_matrix(Eigen::Index dp, Eigen::Index dm) {
  Matrix a = Matrix::Zero(dp + dm, dp + dm);
  a.topLeftCorner(dp, dp).setIdentity();
  a.bottomRightCorner(dm, dm) = -Matrix::Identity(dm, dm);
  return a;
}

// Values of a and b side by side; only used for sampling.
Observable stack(const Observable& a, const Observable& b) {
  Observable s;
  s.dim_in = a.dim_in;
  s.dim_out = a.dim_out + b.dim_out;
  const auto ea = a.eval;
  const auto eb = b.eval;
  const std::size_t na = a.dim_out;
  const std::size_t nb = b.dim_out;
  s.eval = [ea, eb, na, nb](std::span<const double> y, std::span<double> out) {
    ea(y, out.subspan(0, na));
    eb(y, out.subspan(na, nb));
  };
  return s;
}

Matrix leading_block(const Matrix& m) {
  const Eigen::Index k = std::min(m.rows(), m.cols());
  return m.topLeftCorner(k, k);
}

Matrix identity_leading(Eigen::Index rows, Eigen::Index cols) {
  Matrix e = Matrix::Zero(rows, cols);
  for (Eigen::Index i = 0; i < std::min(rows, cols); ++i) e(i, i) = 1.0;
  return e;
}

double sigma_min(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues().minCoeff();
}

EigenSplit split_of(const Observable& v) {
  if (!v.equivariance) throw StructuralError("observable carries no equivariance matrix");
  return eigen_split(Involution(*v.equivariance));
}

}  // namespace

Observable InvariantBasis::slice(std::size_t first, std::size_t n) const {
  if (first + n > count) throw DimensionError("basis slice out of range");
  Matrix sel = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(count));
  for (std::size_t j = 0; j < n; ++j) sel(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(first + j)) = 1.0;
  return with_equivariance(transform(sel, functions), Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
}

InvariantBasis build_invariant_basis(const FastSystem& system, const Trajectory& calib,
                                     const std::vector<Polynomial>& generators, std::size_t count,
                                     const BasisOptions& opts) {
  check_pool(system, generators, count);
  if (calib.dim != system.dim) throw DimensionError("build_invariant_basis: calibration trajectory has wrong dimension");
  GramStats stats(generators, system.reversal);
  for (std::size_t i = 0; i < calib.size(); ++i) stats.add(calib.point(i));
  stats.flush();
  return finish_basis(system, stats, generators, count, opts);
}

InvariantBasis build_invariant_basis(const FastSystem& system, double duration, double step,
                                     std::size_t thin, std::uint64_t seed,
                                     const std::vector<Polynomial>& generators, std::size_t count,
                                     const BasisOptions& opts) {
  check_pool(system, generators, count);
  if (thin == 0) throw Error("build_invariant_basis: thinning factor must be at least 1");
  const double dt = step * static_cast<double>(thin);
  const auto n = static_cast<std::size_t>(std::floor(duration / dt + 1e-9));
  std::vector<double> y = draw_stationary(system, step, seed);
  GramStats stats(generators, system.reversal);
  Rk4 rk(system.dim);
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0)
      for (std::size_t s = 0; s < thin; ++s) rk.step(system.field, std::span<double>(y), step);
    if ((k & 1023U) == 0)
      for (double x : y)
        if (!std::isfinite(x)) throw NumericalError("non-finite state during calibration", dt * static_cast<double>(k));
    stats.add(y);
  }
  stats.flush();
  return finish_basis(system, stats, generators, count, opts);
}

std::vector<Polynomial> default_generator_pool(const FastSystem& system, int max_degree) {
  const std::size_t m = system.dim;
  const CounterRng rng(0x5eed, 5);
  constexpr std::size_t kPoints = 16;
  std::vector<double> pts(kPoints * m), rpts(kPoints * m);
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = 1.5 * rng.normal(i);
  for (std::size_t i = 0; i < kPoints; ++i)
    system.reversal.apply(std::span<const double>(pts.data() + i * m, m), std::span<double>(rpts.data() + i * m, m));
  std::vector<Polynomial> pool;
  for (auto& p : monomials_up_to(m, max_degree)) {
    double sym = 0.0, raw = 0.0;
    for (std::size_t i = 0; i < kPoints; ++i) {
      const double a = p(std::span<const double>(pts.data() + i * m, m));
      const double b = p(std::span<const double>(rpts.data() + i * m, m));
      sym = std::max(sym, std::abs(0.5 * (a + b)));
      raw = std::max(raw, std::abs(a));
    }
    if (sym > 1e-10 * raw) pool.push_back(std::move(p));
  }
  return pool;
}

Observable random_equivariant_observable(const FastSystem& system, const Matrix& a, int max_degree,
                                         std::uint64_t seed, std::size_t terms) {
  const std::size_t m = system.dim;
  const EigenSplit split = eigen_split(Involution(a));
  const CounterRng probe_rng(0x5eed, 5);
  constexpr std::size_t kPoints = 16;
  std::vector<double> pts(kPoints * m), rpts(kPoints * m);
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = 1.5 * probe_rng.normal(i);
  for (std::size_t i = 0; i < kPoints; ++i)
    system.reversal.apply(std::span<const double>(pts.data() + i * m, m), std::span<double>(rpts.data() + i * m, m));
  std::vector<Polynomial> even, odd;
  for (auto& p : monomials_up_to(m, max_degree)) {
    double plus = 0.0, minus = 0.0, raw = 0.0;
    for (std::size_t i = 0; i < kPoints; ++i) {
      const double x = p(std::span<const double>(pts.data() + i * m, m));
      const double y = p(std::span<const double>(rpts.data() + i * m, m));
      plus = std::max(plus, std::abs(x - y));
      minus = std::max(minus, std::abs(x + y));
      raw = std::max(raw, std::abs(x));
    }
    if (plus <= 1e-12 * raw) even.push_back(p);
    else if (minus <= 1e-12 * raw) odd.push_back(std::move(p));
  }
  if ((split.d_plus > 0 && even.empty()) || (split.d_minus > 0 && odd.empty()))
    throw RankError("random_equivariant_observable: no monomials of the required parity");

  const CounterRng pick_rng(seed, 9), coeff_rng(seed, 10);
  std::uint64_t counter = 0;
  const Eigen::Index d = split.dim();
  // u_k is even for k < d+ and odd otherwise; v = basis * u
  std::vector<Polynomial> out(static_cast<std::size_t>(d), Polynomial(m));
  for (Eigen::Index k = 0; k < d; ++k) {
    const auto& pool = k < split.d_plus ? even : odd;
    for (std::size_t t = 0; t < terms; ++t) {
      const auto pick = static_cast<std::size_t>(pick_rng.uniform(counter) * static_cast<double>(pool.size()));
      const double c = coeff_rng.normal(counter++);
      const auto& mono = pool[std::min(pick, pool.size() - 1)].terms().front();
      for (Eigen::Index i = 0; i < d; ++i) {
        const double w = split.basis(i, k);
        if (w != 0.0) out[static_cast<std::size_t>(i)].add_term(w * c * mono.coeff, mono.exponents);
      }
    }
  }
  return with_equivariance(polynomial_observable(std::move(out)), a);
}

BasisCheck check_basis(const ObservableSeries& phi) {
  BasisCheck c;
  const double n = static_cast<double>(phi.size());
  const Matrix g = phi.values * phi.values.transpose() / n;
  c.gram_residual = (g - Matrix::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();
  c.mean_residual = phi.values.rowwise().mean().cwiseAbs().maxCoeff();
  return c;
}

Decomposition decompose(const Observable& v, const EigenSplit& split, const AffineMap& reversal,
                        const Trajectory& probe, double tol) {
  if (static_cast<Eigen::Index>(v.dim_out) != split.dim()) throw DimensionError("decompose: split does not match the observable");
  const Matrix a = split.pi_plus - split.pi_minus;
  if (v.equivariance && (*v.equivariance - a).cwiseAbs().maxCoeff() > 1e-10)
    throw StructuralError("decompose: observable is tagged with a different equivariance matrix");
  require_equivariance(v, reversal, a, probe, tol, "decompose");
  const auto d = static_cast<Eigen::Index>(v.dim_out);
  return {with_equivariance(transform(split.pi_plus, v), Matrix::Identity(d, d)),
          with_equivariance(transform(split.pi_minus, v), -Matrix::Identity(d, d))};
}

Observable construct_v(const Observable& f, const Observable& h, const FastSystem& system,
                       const Trajectory& probe, const ConstructOptions& opts) {
  if (f.dim_in != system.dim || h.dim_in != system.dim)
    throw DimensionError("construct_v: f and h must act on the fast state");
  if (f.dim_out == 0 || h.dim_out == 0) throw DimensionError("construct_v: f and h need at least one component");
  if (!f.expression || !h.expression) throw Error("construct_v: f and h need replayable expressions");
  if (!h.has_jacobian() && !opts.allow_finite_differences)
    throw Error("construct_v: h has no gradient and finite differences are disabled");
  const auto dp = static_cast<Eigen::Index>(f.dim_out);
  const auto dm = static_cast<Eigen::Index>(h.dim_out);
  require_equivariance(f, system.reversal, Matrix::Identity(dp, dp), probe, opts.tolerance, "construct_v: f");
  require_equivariance(h, system.reversal, Matrix::Identity(dm, dm), probe, opts.tolerance, "construct_v: h");
  auto node = std::make_shared<ObservableNode>();
  node->kind = ObservableNode::Kind::constructed;
  node->children = {f.expression, h.expression};
  Observable v = build_observable(node, system);
  v.equivariance = split_matrix(dp, dm);
  return v;
}

Observable realize_target(const Matrix& f_target, const InvariantBasis& basis, const FastSystem& system,
                          const Trajectory& probe, const ConstructOptions& opts) {
  const auto dp = f_target.rows();
  const auto dm = f_target.cols();
  if (dp < 1 || dm < 1) throw DimensionError("realize_target: F must have at least one row and one column");
  if (static_cast<std::size_t>(dm) > basis.count)
    throw DimensionError("realize_target: the basis has fewer functions than F has columns");
  const Observable h = basis.slice(0, static_cast<std::size_t>(dm));
  const Observable f = with_equivariance(transform(0.5 * f_target, h), Matrix::Identity(dp, dp));
  return construct_v(f, h, system, probe, opts);
}

Observable scale_transform(const Observable& v, const Matrix& l_plus, const Matrix& l_minus) {
  const EigenSplit split = split_of(v);
  if (l_plus.rows() != split.d_plus || l_plus.cols() != split.d_plus || l_minus.rows() != split.d_minus ||
      l_minus.cols() != split.d_minus)
    throw DimensionError("scale_transform: L+ and L- must match the eigenspace dimensions");
  Matrix block = Matrix::Zero(split.dim(), split.dim());
  block.topLeftCorner(split.d_plus, split.d_plus) = l_plus;
  block.bottomRightCorner(split.d_minus, split.d_minus) = l_minus;
  const Matrix m = split.basis * block * split.basis_inverse;
  return with_equivariance(transform(m, v), *v.equivariance);
}

TelescopingCheck telescoping_residual(const FastSystem& system, const Observable& v, const Observable& h,
                                      std::span<const double> y0, double duration, double step) {
  if (v.dim_in != system.dim || h.dim_in != system.dim || y0.size() != system.dim)
    throw DimensionError("telescoping_residual: dimensions do not match the fast system");
  if (h.dim_out > v.dim_out) throw DimensionError("telescoping_residual: h has more components than v");
  const std::size_t m = system.dim;
  const std::size_t dm = h.dim_out;
  const std::size_t first = v.dim_out - dm;
  const std::size_t dv = v.dim_out;
  const auto field = system.field;
  const auto ev = v.eval;
  auto augmented = [field, ev, m, dm, first, dv](std::span<const double> s, std::span<double> out) {
    field(s.subspan(0, m), out.subspan(0, m));
    double buf[64];
    std::vector<double> heap;
    double* vals = buf;
    if (dv > 64) {
      heap.resize(dv);
      vals = heap.data();
    }
    ev(s.subspan(0, m), std::span<double>(vals, dv));
    for (std::size_t r = 0; r < dm; ++r) out[m + r] = vals[first + r];
  };
  std::vector<double> state(m + dm, 0.0);
  std::copy(y0.begin(), y0.end(), state.begin());
  const std::size_t n = step_count(duration, step);
  const double hstep = duration / static_cast<double>(n);
  Rk4 rk(m + dm);
  for (std::size_t k = 0; k < n; ++k) rk.step(augmented, std::span<double>(state), hstep);
  std::vector<double> h0(dm), h1(dm);
  h.eval(y0, h0);
  h.eval(std::span<const double>(state.data(), m), h1);
  TelescopingCheck c;
  for (std::size_t r = 0; r < dm; ++r) {
    c.residual = std::max(c.residual, std::abs(state[m + r] - (h1[r] - h0[r])));
    c.scale = std::max(c.scale, std::abs(h1[r]) + std::abs(h0[r]));
  }
  return c;
}

double rank_threshold(const Matrix& se) { return 3.0 * se.norm(); }

RankRaise raise_rank(const Observable& v0, const Observable& w, const ObservableSeries& series_v0,
                     const ObservableSeries& series_w, const RankRaiseOptions& opts) {
  if (series_v0.size() != series_w.size() || series_v0.dim() != series_w.dim())
    throw DimensionError("raise_rank: series of v0 and w must share shape");
  const EigenSplit split = split_of(v0);
  if (!w.equivariance || (*w.equivariance - *v0.equivariance).cwiseAbs().maxCoeff() > 1e-12)
    throw StructuralError("raise_rank: v0 and w must carry the same equivariance matrix");
  auto chi_at = [&](double t) {
    const ObservableSeries s{series_v0.values + t * series_w.values, series_v0.step};
    return estimate_e0(s, split, opts.correlogram);
  };
  const Matrix c0 = chi_at(0.0).e0;
  const Matrix ch = chi_at(0.5).e0;
  const E0Estimate at1 = chi_at(1.0);
  const Matrix c1 = at1.e0;
  RankRaise r;
  r.a0 = c0;
  r.a1 = 4.0 * ch - 3.0 * c0 - c1;
  r.a2 = 2.0 * c1 - 4.0 * ch + 2.0 * c0;
  const Matrix lead2 = leading_block(r.a2);
  Eigen::FullPivLU<Matrix> lu(lead2);
  if (!lu.isInvertible()) throw RankError("raise_rank: the quadratic coefficient of chi is singular");
  const Matrix inv = lu.inverse();
  r.t = find_full_rank_t(inv * leading_block(r.a0), inv * leading_block(r.a1), opts.eps_max, opts.t_options);
  // an exactly nonsingular chi can still sit inside the estimation noise
  const double floor = rank_threshold(at1.se);
  auto model = [&](double t) { return leading_block(r.a0 + t * r.a1 + t * t * r.a2); };
  while (sigma_min(model(r.t)) <= floor && 2.0 * r.t < opts.eps_max) r.t *= 2.0;
  r.v = with_equivariance(combine({1.0, r.t}, {v0, w}), *v0.equivariance);
  const E0Estimate at = chi_at(r.t);
  r.chi = at.e0;
  r.se = at.se;
  return r;
}

NearbyResult nearby_target(const Observable& v0, const Matrix& target, const InvariantBasis& basis,
                           const FastSystem& system, const Trajectory& probe, const NearbyOptions& opts) {
  const EigenSplit split = split_of(v0);
  if (target.rows() != split.d_plus || target.cols() != split.d_minus)
    throw DimensionError("nearby_target: target shape must be d+ x d-");
  const Matrix a_split = split_matrix(split.d_plus, split.d_minus);
  // work in split coordinates, map back at the end
  const Observable v0s = with_equivariance(transform(split.basis_inverse, v0), a_split);
  const Observable w = realize_target(identity_leading(split.d_plus, split.d_minus), basis, system, probe);
  const ObservableSeries both =
      sample_series(system, stack(v0s, w), opts.duration, opts.step, opts.thin, opts.seed);
  const Eigen::Index d = split.dim();
  const ObservableSeries s0{both.values.topRows(d), both.step};
  const ObservableSeries sw{both.values.bottomRows(d), both.step};
  const EigenSplit diag_split = eigen_split(Involution(a_split));

  NearbyResult out;
  const E0Estimate start = estimate_e0(s0, diag_split, opts.raise.correlogram);
  out.chi_start = start.e0;
  Observable vt = v0s;
  Matrix chi = start.e0;
  out.chi_se = start.se;
  if (sigma_min(start.e0) <= rank_threshold(start.se)) {
    const RankRaise rr = raise_rank(v0s, w, s0, sw, opts.raise);
    out.raised = true;
    out.t = rr.t;
    vt = rr.v;
    chi = rr.chi;
    out.chi_se = rr.se;
  }
  out.chi_raised = chi;
  out.factor = full_rank_factor(chi, target, opts.factor);
  const Observable vs = scale_transform(vt, out.factor.p, out.factor.q);
  out.v = with_equivariance(transform(split.basis, vs), *v0.equivariance);
  return out;
}

}  // namespace levy
