#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "levy/fast_system.hpp"
#include "levy/polynomial.hpp"
#include "levy/symmetry.hpp"

namespace levy {

using ObservableFn = std::function<void(std::span<const double> y, std::span<double> out)>;
/// Row-major dim_out x dim_in Jacobian.
using JacobianFn = std::function<void(std::span<const double> y, std::span<double> jac)>;

/// Replayable description of an observable. Closures are rebuilt from it;
/// nothing else is persisted.
struct ObservableNode {
  enum class Kind { polynomial, basis, linear, sum, constructed };

  Kind kind = Kind::polynomial;
  // polynomial: output components; basis: generators
  std::vector<Polynomial> polys;
  // linear: M (out = M child); basis: coefficients (count x generators)
  Matrix matrix;
  // basis: constant term of each function
  Vector offset;
  // basis: reversal used to symmetrize the generators
  AffineMap reversal;
  std::vector<double> weights;
  // linear: {child}; sum: terms; constructed: {f, h}
  std::vector<std::shared_ptr<const ObservableNode>> children;
};
using NodePtr = std::shared_ptr<const ObservableNode>;

/// A vector function v: R^m -> R^d with optional exact Jacobian and an
/// optional equivariance tag A (v(Ry) = A v(y)).
struct Observable {
  std::size_t dim_in = 0;
  std::size_t dim_out = 0;
  ObservableFn eval;
  JacobianFn jacobian;
  std::optional<Matrix> equivariance;
  NodePtr expression;

  bool has_jacobian() const noexcept { return static_cast<bool>(jacobian); }
  Vector operator()(std::span<const double> y) const;
};

/// Builds the closures for an expression; `system` supplies the fast field
/// needed by constructed nodes.
Observable build_observable(const NodePtr& node, const FastSystem& system);

Observable polynomial_observable(std::vector<Polynomial> components);
/// Components parsed against the system's variable names.
Observable parse_polynomial_observable(const std::vector<std::string>& components,
                                       const FastSystem& system);
/// out = M v(y); keeps the expression replayable when v's is.
Observable transform(const Matrix& m, const Observable& v);
/// out = sum_i w_i v_i(y); all terms must share dimensions.
Observable combine(const std::vector<double>& weights, const std::vector<Observable>& terms);

Observable with_equivariance(Observable v, const Matrix& a);

struct EquivarianceCheck {
  double residual = 0.0;
  // |v(Ry)|_inf + |v(y)|_inf at the worst point, for relative tolerances
  double scale = 0.0;
  std::vector<double> worst_point;
};

/// max over probe points of |v(Ry) - A v(y)|_inf.
EquivarianceCheck equivariance_residual(const Observable& v, const AffineMap& reversal,
                                        const Matrix& a, const Trajectory& probe);

/// Throws SymmetryError (with the worst point) when the residual exceeds
/// tol * max(1, scale).
void require_equivariance(const Observable& v, const AffineMap& reversal, const Matrix& a,
                          const Trajectory& probe, double tol, const std::string& what);

/// d x N matrix of v along the trajectory (column k = v(y_k)).
Matrix observe(const Trajectory& traj, const Observable& v);

/// Short probe trajectory plus scattered points, for symmetry checks.
Trajectory default_probes(const FastSystem& system, std::size_t count = 256,
                          std::uint64_t seed = 7);

/// JSON with the expression tree; variable names come from the system.
std::string serialize_observable(const Observable& v, const FastSystem& system);
Observable load_observable_text(const std::string& text, const FastSystem& system);
void save_observable(const std::string& path, const Observable& v, const FastSystem& system);
Observable load_observable(const std::string& path, const FastSystem& system);

}  // namespace levy
