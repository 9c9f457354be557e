#include "levy/symmetry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

namespace levy {

namespace {

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

double inf_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

// Orthonormal basis of range(proj) with a fixed sign convention: the
// largest-magnitude entry of each column is positive.
Matrix range_basis(const Matrix& proj, Eigen::Index rank) {
  const Eigen::Index d = proj.rows();
  if (rank == 0) return Matrix(d, 0);
  Eigen::ColPivHouseholderQR<Matrix> qr(proj);
  Matrix q = qr.householderQ() * Matrix::Identity(d, rank);
  for (Eigen::Index c = 0; c < rank; ++c) {
    Eigen::Index idx = 0;
    q.col(c).cwiseAbs().maxCoeff(&idx);
    if (q(idx, c) < 0) q.col(c) *= -1.0;
  }
  return q;
}

}  // namespace

double Involution::tolerance(const Matrix& m) {
  const double s = std::max(1.0, inf_norm(m));
  return 1e-12 * s * s;
}

double Involution::defect(const Matrix& m) {
  return max_abs(m * m - Matrix::Identity(m.rows(), m.cols()));
}

Involution::Involution(Matrix m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols()) {
    std::ostringstream os;
    os << "involution must be square, got " << m_.rows() << "x" << m_.cols();
    throw DimensionError(os.str());
  }
  const double err = defect(m_);
  if (!(err <= tolerance(m_))) {
    std::ostringstream os;
    os << "matrix is not an involution: max |M*M - I| = " << err;
    throw StructuralError(os.str());
  }
}

EigenSplit eigen_split(const Involution& a) {
  const Eigen::Index d = a.dim();
  const Matrix eye = Matrix::Identity(d, d);
  EigenSplit s;
  s.pi_plus = 0.5 * (eye + a.matrix());
  s.pi_minus = 0.5 * (eye - a.matrix());
  // trace(pi_plus) is the +1 multiplicity for any involution
  s.d_plus = static_cast<Eigen::Index>(std::lround(s.pi_plus.trace()));
  s.d_minus = d - s.d_plus;
  s.basis.resize(d, d);
  s.basis << range_basis(s.pi_plus, s.d_plus), range_basis(s.pi_minus, s.d_minus);
  s.basis_inverse = s.basis.partialPivLu().inverse();
  return s;
}

double symmetry_defect(const Matrix& m) { return max_abs(m - m.transpose()); }
double skew_defect(const Matrix& m) { return max_abs(m + m.transpose()); }

BlockForm block_decompose(const Matrix& sigma, const Matrix& e, const EigenSplit& split) {
  const Eigen::Index d = split.dim();
  if (sigma.rows() != d || sigma.cols() != d || e.rows() != d || e.cols() != d) {
    std::ostringstream os;
    os << "block_decompose: expected " << d << "x" << d << " matrices, got Sigma "
       << sigma.rows() << "x" << sigma.cols() << " and E " << e.rows() << "x" << e.cols();
    throw DimensionError(os.str());
  }
  const double tol_s = 1e-10 * std::max(1.0, max_abs(sigma));
  const double tol_e = 1e-10 * std::max(1.0, max_abs(e));
  if (symmetry_defect(sigma) > tol_s) throw StructuralError("block_decompose: Sigma is not symmetric");
  if (skew_defect(e) > tol_e) throw StructuralError("block_decompose: E is not skew-symmetric");

  BlockForm out;
  out.sigma_split = split.basis_inverse * sigma * split.basis_inverse.transpose();
  out.e_split = split.basis_inverse * e * split.basis_inverse.transpose();
  const auto dp = split.d_plus;
  const auto dm = split.d_minus;
  out.sigma_plus = out.sigma_split.topLeftCorner(dp, dp);
  out.sigma_minus = out.sigma_split.bottomRightCorner(dm, dm);
  out.e0 = out.e_split.topRightCorner(dp, dm);
  out.off_block_residual = std::max({max_abs(out.sigma_split.topRightCorner(dp, dm)),
                                     max_abs(out.sigma_split.bottomLeftCorner(dm, dp)),
                                     max_abs(out.e_split.topLeftCorner(dp, dp)),
                                     max_abs(out.e_split.bottomRightCorner(dm, dm))});
  return out;
}

Reconstructed reconstruct(const BlockForm& form, const EigenSplit& split) {
  return {split.basis * form.sigma_split * split.basis.transpose(),
          split.basis * form.e_split * split.basis.transpose()};
}

namespace {

// Factor for a wide (m <= n) pair; see full_rank_factor.
FullRankFactorization factor_wide(const Matrix& e0, const Matrix& e) {
  const Eigen::Index m = e0.rows();
  const Eigen::Index n = e0.cols();

  // Column order from elimination with partial pivoting along each row.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Matrix w = e0;
  for (Eigen::Index r = 0; r < m; ++r) {
    Eigen::Index best = r;
    for (Eigen::Index c = r + 1; c < n; ++c)
      if (std::abs(w(r, order[c])) > std::abs(w(r, order[best]))) best = c;
    std::swap(order[r], order[best]);
    const double piv = w(r, order[r]);
    if (piv == 0.0) throw RankError("full_rank_factor: E0 is rank deficient", static_cast<std::size_t>(r));
    for (Eigen::Index rr = r + 1; rr < m; ++rr) {
      const double f = w(rr, order[r]) / piv;
      for (Eigen::Index c = 0; c < n; ++c) w(rr, c) -= f * w(r, c);
    }
  }
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(n);
  for (Eigen::Index c = 0; c < n; ++c) perm.indices()(c) = static_cast<int>(order[c]);

  const Matrix e0p = e0 * perm;
  const Matrix lead = e0p.leftCols(m);
  const Matrix rest = e0p.rightCols(n - m);
  const Matrix p0 = lead.partialPivLu().inverse();
  Matrix u = Matrix::Identity(n, n);
  u.topRightCorner(m, n - m) = -p0 * rest;
  const Matrix q0t = perm * u;
  const Matrix q0 = q0t.transpose();

  // G = P0 E Q0^T = [I + D1, D2]
  const Matrix g = p0 * e * q0t;
  const Matrix d1 = g.leftCols(m) - Matrix::Identity(m, m);
  const double d1_norm = spectral_norm(d1);
  if (!(d1_norm < 1.0))
    throw ClosenessError("full_rank_factor: E is too far from E0 for a near-identity reduction");

  const Matrix p1 = g.leftCols(m).partialPivLu().inverse();
  const Matrix k = p1 * g.rightCols(n - m);
  Matrix q1t = Matrix::Identity(n, n);
  q1t.topRightCorner(m, n - m) = -k;
  const Matrix q1 = q1t.transpose();

  const Matrix p0_inv = lead;
  const Matrix q0_inv = q0.partialPivLu().inverse();
  FullRankFactorization out;
  out.p = p0_inv * p1.partialPivLu().inverse() * p0;
  out.q = q0_inv * q1.partialPivLu().inverse() * q0;

  const double p0n = spectral_norm(p0);
  const double q0n = spectral_norm(q0);
  const double kp0 = p0n * spectral_norm(p0_inv);
  const double kq0 = q0n * spectral_norm(q0_inv);
  out.bound_constant = p0n * q0n * (kp0 + kq0 / (1.0 - d1_norm));
  return out;
}

}  // namespace

FullRankFactorization full_rank_factor(const Matrix& e0, const Matrix& e,
                                       const FullRankFactorOptions& opts) {
  if (e0.rows() != e.rows() || e0.cols() != e.cols() || e0.size() == 0)
    throw DimensionError("full_rank_factor: E0 and E must be nonempty and of equal shape");

  const Eigen::Index r = std::min(e0.rows(), e0.cols());
  Eigen::JacobiSVD<Matrix> svd0(e0);
  Eigen::JacobiSVD<Matrix> svd1(e);
  const double s0max = svd0.singularValues()(0);
  const double s0min = svd0.singularValues()(r - 1);
  const double s1max = svd1.singularValues()(0);
  const double s1min = svd1.singularValues()(r - 1);
  if (!(s0min > opts.rank_tolerance * std::max(1.0, s0max)))
    throw RankError("full_rank_factor: E0 is rank deficient");
  if (!(s1min > opts.rank_tolerance * std::max(1.0, s1max)))
    throw RankError("full_rank_factor: E is rank deficient");

  const double delta = spectral_norm(e - e0);
  if (delta > opts.closeness * s0min) {
    std::ostringstream os;
    os << "full_rank_factor: |E - E0|_2 = " << delta << " exceeds " << opts.closeness
       << " * sigma_min(E0) = " << opts.closeness * s0min;
    throw ClosenessError(os.str());
  }

  FullRankFactorization out;
  if (e0.rows() <= e0.cols()) {
    out = factor_wide(e0, e);
  } else {
    // E^T = Q E0^T P^T
    FullRankFactorization t = factor_wide(e0.transpose(), e.transpose());
    out = t;
    out.p = t.q;
    out.q = t.p;
  }
  const Matrix prod = out.p * e0 * out.q.transpose();
  out.relative_residual = (prod - e).norm() / e.norm();
  out.identity_distance = spectral_norm(out.p - Matrix::Identity(out.p.rows(), out.p.cols())) +
                          spectral_norm(out.q - Matrix::Identity(out.q.rows(), out.q.cols()));
  out.observed_constant = delta > 0.0 ? out.identity_distance / delta : 0.0;
  return out;
}

double find_full_rank_t(const Matrix& a0, const Matrix& a1, double eps_max,
                        const FullRankTOptions& opts) {
  if (!(eps_max > 0.0)) throw Error("find_full_rank_t: eps_max must be positive");
  if (a0.rows() != a0.cols() || a1.rows() != a0.rows() || a1.cols() != a0.cols())
    throw DimensionError("find_full_rank_t: A0 and A1 must be square and of equal size");
  const Eigen::Index d = a0.rows();
  const Matrix eye = Matrix::Identity(d, d);
  double best_ratio = 0.0;
  for (int k = opts.grid_levels; k >= 1; --k) {
    const double t = eps_max * std::ldexp(1.0, -k);
    const Matrix at = a0 + t * a1 + t * t * eye;
    const double scale = std::pow(inf_norm(at), static_cast<double>(d));
    const double det = d == 0 ? 1.0 : at.partialPivLu().determinant();
    const double ratio = scale > 0.0 ? std::abs(det) / scale : (d == 0 ? 1.0 : 0.0);
    best_ratio = std::max(best_ratio, ratio);
    if (ratio > opts.singular_tolerance) return t;
  }
  std::ostringstream os;
  os << "find_full_rank_t: every grid point is numerically singular (best |det|/scale = "
     << best_ratio << ", tolerance " << opts.singular_tolerance << ")";
  throw NumericalError(os.str());
}

}  // namespace levy
