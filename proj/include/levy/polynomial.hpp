#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace levy {

/// Real polynomial in `dim` variables, stored as a list of monomial terms.
class Polynomial {
public:
  struct Term {
    double coeff = 0.0;
    std::vector<int> exponents;
  };

  Polynomial() = default;
  explicit Polynomial(std::size_t dim) : dim_(dim) {}
  static Polynomial monomial(std::vector<int> exponents, double coeff = 1.0);
  static Polynomial constant(std::size_t dim, double value);

  /// Parses e.g. "q1*p2^2 - 0.5*z1 + 3" over the given variable names.
  static Polynomial parse(std::string_view text, const std::vector<std::string>& names);

  std::size_t dim() const noexcept { return dim_; }
  const std::vector<Term>& terms() const noexcept { return terms_; }
  int degree() const noexcept;

  void add_term(double coeff, std::vector<int> exponents);

  double operator()(std::span<const double> y) const;
  /// d/dy_k written to grad[k].
  void gradient(std::span<const double> y, std::span<double> grad) const;

  std::string to_string(const std::vector<std::string>& names) const;

private:
  std::size_t dim_ = 0;
  std::vector<Term> terms_;
};

/// All monomials of total degree 1..max_degree, ordered by degree then
/// lexicographically with the first variable varying slowest.
std::vector<Polynomial> monomials_up_to(std::size_t dim, int max_degree);

}  // namespace levy
