#pragma once

#include <Eigen/Dense>

#include <cstddef>

#include "levy/errors.hpp"

namespace levy {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A real square matrix with M*M = I. Construction validates the identity.
class Involution {
public:
  explicit Involution(Matrix m);

  const Matrix& matrix() const noexcept { return m_; }
  Eigen::Index dim() const noexcept { return m_.rows(); }

  /// Entry tolerance for M*M = I, scaled by max(1, |M|_inf^2).
  static double tolerance(const Matrix& m);
  /// Largest entry of |M*M - I|.
  static double defect(const Matrix& m);

private:
  Matrix m_;
};

/// Eigenprojections of an involution and a basis adapted to them:
/// the first d_plus basis columns span the +1 eigenspace.
struct EigenSplit {
  Matrix pi_plus;
  Matrix pi_minus;
  Eigen::Index d_plus = 0;
  Eigen::Index d_minus = 0;
  Matrix basis;
  // basis^{-1}; equals basis^T whenever the involution is symmetric.
  Matrix basis_inverse;

  Eigen::Index dim() const noexcept { return d_plus + d_minus; }
};

EigenSplit eigen_split(const Involution& a);

/// Sigma and E expressed in the split coordinates, with the blocks that the
/// reversal symmetry predicts to be nonzero extracted.
struct BlockForm {
  Matrix sigma_plus;
  Matrix sigma_minus;
  Matrix e0;
  // max |entry| of the Sigma off-diagonal blocks and the E diagonal blocks
  double off_block_residual = 0.0;
  // Full transformed matrices, so the inputs can be recovered.
  Matrix sigma_split;
  Matrix e_split;
};

BlockForm block_decompose(const Matrix& sigma, const Matrix& e, const EigenSplit& split);

struct Reconstructed {
  Matrix sigma;
  Matrix e;
};
Reconstructed reconstruct(const BlockForm& form, const EigenSplit& split);

/// Symmetric-part / skew-part residual checks used across modules.
double symmetry_defect(const Matrix& m);
double skew_defect(const Matrix& m);

struct FullRankFactorOptions {
  // E must satisfy |E - E0|_2 <= closeness * sigma_min(E0).
  double closeness = 0.5;
  double rank_tolerance = 1e-10;
};

/// P * E0 * Q^T = E with P, Q near the identity.
struct FullRankFactorization {
  Matrix p;
  Matrix q;
  // |P E0 Q^T - E|_F / |E|_F
  double relative_residual = 0.0;
  // |P - I|_2 + |Q - I|_2
  double identity_distance = 0.0;
  // identity_distance / |E - E0|_2 (zero when E == E0)
  double observed_constant = 0.0;
  // Constant c(E0) from the reduction to (I | 0); identity_distance <= c |E - E0|_2.
  double bound_constant = 0.0;
};

FullRankFactorization full_rank_factor(const Matrix& e0, const Matrix& e,
                                       const FullRankFactorOptions& opts = {});

struct FullRankTOptions {
  // |det A_t| must exceed tolerance * |A_t|_inf^d.
  double singular_tolerance = 1e-10;
  int grid_levels = 40;
};

/// Smallest t on the grid eps_max * 2^-k (k = 1..grid_levels) for which
/// A0 + t A1 + t^2 I is nonsingular.
double find_full_rank_t(const Matrix& a0, const Matrix& a1, double eps_max,
                        const FullRankTOptions& opts = {});

}  // namespace levy
