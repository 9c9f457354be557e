#include "levy/ou.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <sstream>

#include "levy/random.hpp"

namespace levy {

OUSurrogate make_ou(const Matrix& gamma, const Matrix& sigma_noise) {
  const Eigen::Index d = gamma.rows();
  if (gamma.cols() != d || sigma_noise.rows() != d)
    throw DimensionError("make_ou: Gamma must be square and sigma must have matching rows");
  Eigen::EigenSolver<Matrix> es(gamma, false);
  if (es.eigenvalues().real().minCoeff() <= 0.0)
    throw StructuralError("make_ou: Gamma is not stable (an eigenvalue has non-positive real part)");

  // (I (x) Gamma + Gamma (x) I) vec(C) = vec(sigma sigma^T), column-major vec
  const Matrix eye = Matrix::Identity(d, d);
  Matrix k = Matrix::Zero(d * d, d * d);
  for (Eigen::Index j = 0; j < d; ++j) {
    k.block(j * d, j * d, d, d) += gamma;  // I (x) Gamma
    for (Eigen::Index i = 0; i < d; ++i) k.block(i * d, j * d, d, d) += gamma(i, j) * eye;
  }
  const Matrix q = sigma_noise * sigma_noise.transpose();
  const Vector rhs = q.reshaped();
  const Vector c = k.fullPivLu().solve(rhs);
  OUSurrogate ou{gamma, sigma_noise, c.reshaped(d, d)};
  ou.stationary_cov = 0.5 * (ou.stationary_cov + ou.stationary_cov.transpose());
  return ou;
}

double lyapunov_residual(const OUSurrogate& ou) {
  const Matrix r = ou.gamma * ou.stationary_cov + ou.stationary_cov * ou.gamma.transpose() -
                   ou.sigma_noise * ou.sigma_noise.transpose();
  return r.cwiseAbs().maxCoeff();
}

GreenKuboPair ou_closed_form(const OUSurrogate& ou, const Matrix& v) {
  if (v.cols() != ou.gamma.rows()) throw DimensionError("ou_closed_form: V has wrong number of columns");
  Eigen::FullPivLU<Matrix> lu(ou.gamma);
  if (!lu.isInvertible()) throw StructuralError("ou_closed_form: Gamma is singular");
  const Matrix gamma_inv = lu.inverse();
  const Matrix a = ou.stationary_cov * gamma_inv.transpose();  // int_0^inf C0 exp(-Gamma^T t) dt
  const Matrix b = gamma_inv * ou.stationary_cov;              // its transpose
  return {v * (a + b) * v.transpose(), v * (a - b) * v.transpose()};
}

Trajectory simulate_ou(const OUSurrogate& ou, std::size_t points, double step, std::uint64_t seed) {
  if (!(step > 0.0)) throw Error("simulate_ou: step must be positive");
  const Eigen::Index d = ou.gamma.rows();
  const std::size_t du = static_cast<std::size_t>(d);
  const CounterRng rng(seed, 3);
  std::uint64_t counter = 0;

  Eigen::LLT<Matrix> llt(ou.stationary_cov);
  Vector z(d);
  for (Eigen::Index i = 0; i < d; ++i) z(i) = rng.normal(counter++);
  Vector y = llt.matrixL() * z;

  // exact Gaussian transition: y' = Phi y + chol(C0 - Phi C0 Phi^T) w
  const Matrix drift = (-step * ou.gamma).exp();
  const Matrix q = ou.stationary_cov - drift * ou.stationary_cov * drift.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (q + q.transpose()));
  const Matrix diffusion =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  const Eigen::Index nw = d;
  Vector w(nw);
  Vector next(d);

  Trajectory traj;
  traj.step = step;
  traj.dim = du;
  traj.data.resize(points * du);
  for (std::size_t k = 0; k < points; ++k) {
    for (Eigen::Index i = 0; i < d; ++i) traj.data[k * du + static_cast<std::size_t>(i)] = y(i);
    for (Eigen::Index i = 0; i < nw; ++i) w(i) = rng.normal(counter++);
    next.noalias() = drift * y;
    next.noalias() += diffusion * w;
    y.swap(next);
  }
  return traj;
}

}  // namespace levy
