#pragma once

#include <cstdint>

#include "levy/fast_system.hpp"
#include "levy/symmetry.hpp"

namespace levy {

/// Ornstein-Uhlenbeck process dY = -Gamma Y ds + sigma dW with its
/// stationary covariance. Serves as a closed-form oracle for the estimators.
struct OUSurrogate {
  Matrix gamma;
  Matrix sigma_noise;
  Matrix stationary_cov;
};

/// Solves Gamma C + C Gamma^T = sigma sigma^T and validates stability.
OUSurrogate make_ou(const Matrix& gamma, const Matrix& sigma_noise);

/// |Gamma C0 + C0 Gamma^T - sigma sigma^T|_max
double lyapunov_residual(const OUSurrogate& ou);

struct GreenKuboPair {
  Matrix sigma;
  Matrix e;
};

/// Sigma and E of the observable v(y) = V y, integrating the stationary
/// correlation V C0 exp(-Gamma^T t) V^T termwise.
GreenKuboPair ou_closed_form(const OUSurrogate& ou, const Matrix& v);

/// Stationary path sampled with the exact Gaussian transition over `step`.
Trajectory simulate_ou(const OUSurrogate& ou, std::size_t points, double step, std::uint64_t seed);

}  // namespace levy
