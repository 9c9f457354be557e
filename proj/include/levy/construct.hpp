#pragma once

#include <cstdint>
#include <vector>

#include "levy/fast_system.hpp"
#include "levy/green_kubo.hpp"
#include "levy/observable.hpp"
#include "levy/polynomial.hpp"
#include "levy/symmetry.hpp"

namespace levy {

/// Orthonormal, mean-zero, R-invariant functions under the empirical
/// inner product of a calibration run.
struct InvariantBasis {
  // phi: R^m -> R^count
  Observable functions;
  std::vector<Polynomial> generators;
  Matrix coefficients;
  Vector offset;
  std::size_t count = 0;
  double gram_residual = 0.0;
  double mean_residual = 0.0;

  /// Components [first, first + n) as an observable.
  Observable slice(std::size_t first, std::size_t n) const;
};

struct BasisOptions {
  // relative norm below which a generator counts as dependent
  double collapse_tolerance = 1e-8;
  // drop dependent generators instead of throwing RankError
  bool skip_collapsed = false;
};

InvariantBasis build_invariant_basis(const FastSystem& system, const Trajectory& calib,
                                     const std::vector<Polynomial>& generators, std::size_t count,
                                     const BasisOptions& opts = {});

/// Same, with the calibration states generated on the fly from a
/// stationary start (stored every `thin` steps of size `step`).
InvariantBasis build_invariant_basis(const FastSystem& system, double duration, double step,
                                     std::size_t thin, std::uint64_t seed,
                                     const std::vector<Polynomial>& generators, std::size_t count,
                                     const BasisOptions& opts = {});

/// Monomials up to max_degree whose R-symmetrization is not identically zero.
std::vector<Polynomial> default_generator_pool(const FastSystem& system, int max_degree = 4);

/// A-equivariant polynomial observable: `terms` random monomials of matching
/// R-parity per split coordinate, mapped back through the eigenbasis of A.
Observable random_equivariant_observable(const FastSystem& system, const Matrix& a, int max_degree,
                                         std::uint64_t seed, std::size_t terms = 3);

struct BasisCheck {
  double gram_residual = 0.0;
  double mean_residual = 0.0;
};
/// Empirical orthonormality on an independent series of phi.
BasisCheck check_basis(const ObservableSeries& phi_series);

struct Decomposition {
  Observable plus;
  Observable minus;
};

/// v+ = pi+ v and v- = pi- v after checking v(Ry) = A v(y) on the probes.
Decomposition decompose(const Observable& v, const EigenSplit& split, const AffineMap& reversal,
                        const Trajectory& probe, double tol = 1e-8);

struct ConstructOptions {
  bool allow_finite_differences = true;
  double tolerance = 1e-8;
};

/// v = (-f, grad h . g), tagged with A = diag(I, -I).
Observable construct_v(const Observable& f, const Observable& h, const FastSystem& system,
                       const Trajectory& probe, const ConstructOptions& opts = {});

/// Observable whose E0 block targets F, built from the first F.cols() basis
/// functions: h_j = phi_j, f = (F / 2) (phi_1 .. phi_{d-}).
Observable realize_target(const Matrix& f_target, const InvariantBasis& basis, const FastSystem& system,
                          const Trajectory& probe, const ConstructOptions& opts = {});

/// (L+ v+, L- v-) in the split coordinates of v's equivariance matrix.
Observable scale_transform(const Observable& v, const Matrix& l_plus, const Matrix& l_minus);

struct TelescopingCheck {
  double residual = 0.0;
  double scale = 0.0;
};

/// Integrates the last h.dim_out components of v along the flow next to the
/// state and compares the running integral with h(y_T) - h(y_0).
TelescopingCheck telescoping_residual(const FastSystem& system, const Observable& v, const Observable& h,
                                      std::span<const double> y0, double duration, double step);

/// Lower bound on sigma_min for an estimated E0 to count as full rank.
double rank_threshold(const Matrix& se);

struct RankRaise {
  Observable v;
  double t = 0.0;
  // chi(v0 + t w) = a0 + t a1 + t^2 a2, from estimates at t = 0, 1/2, 1
  Matrix a0, a1, a2;
  Matrix chi;
  Matrix se;
};

struct RankRaiseOptions {
  double eps_max = 1.0;
  FullRankTOptions t_options;
  CorrelogramOptions correlogram;
};

/// Moves v0 along v0 + t w, with chi(w) = (I | 0), to a t where the leading
/// square block of chi is nonsingular. Both observables use split coordinates.
RankRaise raise_rank(const Observable& v0, const Observable& w, const ObservableSeries& series_v0,
                     const ObservableSeries& series_w, const RankRaiseOptions& opts);

struct NearbyResult {
  Observable v;
  bool raised = false;
  double t = 0.0;
  Matrix chi_start;
  Matrix chi_raised;
  Matrix chi_se;
  FullRankFactorization factor;
};

struct NearbyOptions {
  RankRaiseOptions raise;
  FullRankFactorOptions factor;
  double duration = 2e4;
  double step = 0.01;
  std::size_t thin = 5;
  std::uint64_t seed = 1;
};

/// Observable close to v0 whose E0 block targets `target`: rank raising when
/// chi(v0) is rank deficient, then v = (P + Q) v_t with P chi(v_t) Q^T = target.
NearbyResult nearby_target(const Observable& v0, const Matrix& target, const InvariantBasis& basis,
                           const FastSystem& system, const Trajectory& probe, const NearbyOptions& opts);

}  // namespace levy
