#include "levy/polynomial.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <iomanip>
#include <sstream>

#include "levy/errors.hpp"

namespace levy {

namespace {

double ipow(double x, int n) {
  double r = 1.0;
  for (int i = 0; i < n; ++i) r *= x;
  return r;
}

class PolyParser {
public:
  PolyParser(std::string_view text, const std::vector<std::string>& names)
      : s_(text), names_(names) {}

  Polynomial run() {
    Polynomial p(names_.size());
    skip();
    if (pos_ >= s_.size()) fail("empty expression");
    bool first = true;
    while (pos_ < s_.size()) {
      double sign = 1.0;
      if (peek() == '+' || peek() == '-') {
        sign = peek() == '-' ? -1.0 : 1.0;
        ++pos_;
        skip();
      } else if (!first) {
        fail("expected '+' or '-'");
      }
      first = false;
      auto [coeff, exps] = term();
      p.add_term(sign * coeff, std::move(exps));
      skip();
    }
    return p;
  }

private:
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    std::ostringstream os;
    os << "polynomial parse error at column " << pos_ + 1 << " in '" << s_ << "': " << msg;
    throw ConfigError(os.str());
  }

  std::pair<double, std::vector<int>> term() {
    double coeff = 1.0;
    std::vector<int> exps(names_.size(), 0);
    for (;;) {
      skip();
      const char c = peek();
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        coeff *= number();
      } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
        const std::string name(s_.substr(start, pos_ - start));
        const auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) fail("unknown variable '" + name + "'");
        int e = 1;
        skip();
        if (peek() == '^') {
          ++pos_;
          skip();
          const double v = number();
          e = static_cast<int>(v);
          if (v != e || e < 0) fail("exponent must be a non-negative integer");
        }
        exps[static_cast<std::size_t>(it - names_.begin())] += e;
      } else {
        fail("expected a number or variable");
      }
      skip();
      if (peek() != '*') break;
      ++pos_;
    }
    return {coeff, exps};
  }

  double number() {
    double v = 0.0;
    const char* b = s_.data() + pos_;
    const auto [ptr, ec] = std::from_chars(b, s_.data() + s_.size(), v);
    if (ec != std::errc{}) fail("bad number");
    pos_ += static_cast<std::size_t>(ptr - b);
    return v;
  }

  std::string_view s_;
  const std::vector<std::string>& names_;
  std::size_t pos_ = 0;
};

}  // namespace

Polynomial Polynomial::monomial(std::vector<int> exponents, double coeff) {
  Polynomial p(exponents.size());
  p.add_term(coeff, std::move(exponents));
  return p;
}

Polynomial Polynomial::constant(std::size_t dim, double value) {
  Polynomial p(dim);
  p.add_term(value, std::vector<int>(dim, 0));
  return p;
}

Polynomial Polynomial::parse(std::string_view text, const std::vector<std::string>& names) {
  return PolyParser(text, names).run();
}

int Polynomial::degree() const noexcept {
  int d = 0;
  for (const auto& t : terms_) {
    int s = 0;
    for (int e : t.exponents) s += e;
    d = std::max(d, s);
  }
  return d;
}

void Polynomial::add_term(double coeff, std::vector<int> exponents) {
  if (exponents.size() != dim_) throw DimensionError("polynomial term has wrong number of exponents");
  for (auto& t : terms_) {
    if (t.exponents == exponents) {
      t.coeff += coeff;
      return;
    }
  }
  terms_.push_back({coeff, std::move(exponents)});
}

double Polynomial::operator()(std::span<const double> y) const {
  double s = 0.0;
  for (const auto& t : terms_) {
    double v = t.coeff;
    for (std::size_t k = 0; k < dim_; ++k)
      if (t.exponents[k]) v *= ipow(y[k], t.exponents[k]);
    s += v;
  }
  return s;
}

void Polynomial::gradient(std::span<const double> y, std::span<double> grad) const {
  std::fill(grad.begin(), grad.begin() + static_cast<std::ptrdiff_t>(dim_), 0.0);
  for (const auto& t : terms_) {
    for (std::size_t k = 0; k < dim_; ++k) {
      if (t.exponents[k] == 0) continue;
      double v = t.coeff * t.exponents[k] * ipow(y[k], t.exponents[k] - 1);
      for (std::size_t j = 0; j < dim_; ++j)
        if (j != k && t.exponents[j]) v *= ipow(y[j], t.exponents[j]);
      grad[k] += v;
    }
  }
}

std::string Polynomial::to_string(const std::vector<std::string>& names) const {
  std::ostringstream os;
  os << std::setprecision(17);
  bool first = true;
  for (const auto& t : terms_) {
    if (t.coeff == 0.0) continue;
    double c = t.coeff;
    if (!first) {
      os << (c < 0 ? " - " : " + ");
      c = std::abs(c);
    } else if (c < 0) {
      os << "-";
      c = -c;
    }
    first = false;
    bool wrote = false;
    if (c != 1.0) {
      os << c;
      wrote = true;
    }
    for (std::size_t k = 0; k < dim_; ++k) {
      if (!t.exponents[k]) continue;
      if (wrote) os << "*";
      os << (k < names.size() ? names[k] : "y" + std::to_string(k + 1));
      if (t.exponents[k] > 1) os << "^" << t.exponents[k];
      wrote = true;
    }
    if (!wrote) os << c;
  }
  if (first) os << "0";
  return os.str();
}

std::vector<Polynomial> monomials_up_to(std::size_t dim, int max_degree) {
  std::vector<Polynomial> out;
  std::vector<int> e(dim, 0);
  for (int deg = 1; deg <= max_degree; ++deg) {
    // compositions of deg into dim parts, first variable's exponent descending
    auto rec = [&](auto&& self, std::size_t k, int left) -> void {
      if (k + 1 == dim) {
        e[k] = left;
        out.push_back(Polynomial::monomial(e));
        return;
      }
      for (int a = left; a >= 0; --a) {
        e[k] = a;
        self(self, k + 1, left - a);
      }
    };
    if (dim > 0) rec(rec, 0, deg);
  }
  return out;
}

}  // namespace levy
