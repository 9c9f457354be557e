#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Eigenvalues>
#include <filesystem>
#include <fstream>
#include <unsupported/Eigen/MatrixFunctions>

#include "levy/construct.hpp"
#include "levy/green_kubo.hpp"
#include "levy/ou.hpp"
#include "levy/random.hpp"

using namespace levy;

namespace {

ObservableSeries noise_series(std::size_t d, std::size_t n, std::uint64_t seed) {
  const CounterRng rng(seed);
  ObservableSeries s;
  s.step = 0.1;
  s.values.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
  std::uint64_t k = 0;
  // AR(1) with a little cross-coupling so C(t) is not symmetric
  Vector x = Vector::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    Vector nx(x.size());
    for (Eigen::Index c = 0; c < x.size(); ++c) nx(c) = 0.6 * x(c) + 0.25 * x((c + 1) % x.size()) + rng.normal(k++);
    x = nx;
    s.values.col(static_cast<Eigen::Index>(i)) = x;
  }
  return s;
}

OUSurrogate rotating_ou() {
  Matrix g(2, 2);
  g << 1, -1, 1, 1;
  return make_ou(g, std::sqrt(2.0) * Matrix::Identity(2, 2));
}

CorrelogramOptions opts(double t_max, std::size_t batches = 20, std::size_t stride = 1) {
  CorrelogramOptions o;
  o.t_max = t_max;
  o.batches = batches;
  o.lag_stride = stride;
  return o;
}

}  // namespace

TEST_CASE("correlogram basics") {
  SUBCASE("constant observable") {
    ObservableSeries s;
    s.step = 0.1;
    s.values = Matrix::Constant(2, 2000, 1.5);
    const auto c = correlogram(s, opts(5.0));
    for (const auto& m : c.values) CHECK(m.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("lag zero is symmetric PSD") {
    const auto s = noise_series(3, 5000, 2);
    const auto c = correlogram(s, opts(2.0));
    const Matrix& c0 = c.values.front();
    CHECK((c0 - c0.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Matrix> es(c0);
    CHECK(es.eigenvalues().minCoeff() >= -1e-12);
  }
  SUBCASE("lags are multiples of the stride") {
    const auto s = noise_series(2, 5000, 3);
    const auto c = correlogram(s, opts(2.0, 20, 4));
    REQUIRE(c.lags.size() >= 2);
    CHECK(c.lags[1] == doctest::Approx(0.4));
    CHECK(c.lags.back() <= 2.0 + 1e-12);
  }
  SUBCASE("preconditions") {
    const auto s = noise_series(2, 1000, 4);
    CHECK_THROWS(correlogram(s, opts(10.0)));  // duration / 10 = 9.99
    CHECK_THROWS(correlogram(s, opts(1.0, 1)));
  }
  SUBCASE("thread count does not change the result") {
    const auto s = noise_series(3, 20000, 5);
    auto o1 = opts(3.0);
    auto o4 = o1;
    o4.threads = 4;
    const auto a = correlogram(s, o1);
    const auto b = correlogram(s, o4);
    for (std::size_t k = 0; k < a.values.size(); ++k) CHECK(a.values[k] == b.values[k]);
    const auto ea = integrate_estimates(a), eb = integrate_estimates(b);
    CHECK(ea.sigma_hat == eb.sigma_hat);
    CHECK(ea.se_e == eb.se_e);
  }
  SUBCASE("csv export") {
    const auto s = noise_series(2, 2000, 6);
    const auto c = correlogram(s, opts(1.0));
    const auto path = (std::filesystem::temp_directory_path() / "levy_corr.csv").string();
    write_correlogram_csv(path, c);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "lag,c1_1,c1_2,c2_1,c2_2");
    std::filesystem::remove(path);
  }
}

TEST_CASE("integrate_estimates structure") {
  SUBCASE("zero correlogram") {
    Correlogram c;
    c.lags = {0.0, 0.1, 0.2};
    c.values.assign(3, Matrix::Zero(2, 2));
    c.batch_values.assign(4, c.values);
    const auto e = integrate_estimates(c);
    CHECK(e.sigma_hat.norm() == 0.0);
    CHECK(e.e_hat.norm() == 0.0);
  }
  SUBCASE("exact symmetry of Sigma and skewness of E") {
    const auto e = integrate_estimates(correlogram(noise_series(3, 20000, 7), opts(3.0)));
    CHECK(e.sigma_hat == e.sigma_hat.transpose());
    CHECK(e.e_hat == -e.e_hat.transpose());
    CHECK(e.e_hat.cwiseAbs().maxCoeff() > 0.0);
  }
  SUBCASE("scalar observable has E = 0 exactly") {
    const auto e = integrate_estimates(correlogram(noise_series(1, 20000, 8), opts(3.0)));
    CHECK(e.e_hat(0, 0) == 0.0);
    CHECK(e.se_e(0, 0) == 0.0);
  }
  SUBCASE("quadratic in v") {
    auto s = noise_series(2, 20000, 9);
    const auto e1 = integrate_estimates(correlogram(s, opts(3.0)));
    auto s2 = s;
    s2.values *= 2.0;
    const auto e2 = integrate_estimates(correlogram(s2, opts(3.0)));
    CHECK(e2.sigma_hat == 4.0 * e1.sigma_hat);
    CHECK(e2.e_hat == 4.0 * e1.e_hat);
    auto s3 = s;
    s3.values *= 3.0;
    const auto e3 = integrate_estimates(correlogram(s3, opts(3.0)));
    CHECK((e3.sigma_hat - 9.0 * e1.sigma_hat).norm() <= 1e-12 * e3.sigma_hat.norm());
    CHECK((e3.e_hat - 9.0 * e1.e_hat).norm() <= 1e-12 * e3.e_hat.norm());
  }
}

TEST_CASE("OU oracle") {
  const auto ou = rotating_ou();
  const Trajectory t = simulate_ou(ou, 400000, 0.01, 21);
  const Observable id = polynomial_observable({Polynomial::monomial({1, 0}), Polynomial::monomial({0, 1})});
  const auto series = observe_series(t, id);
  SUBCASE("correlation curve") {
    const auto c = correlogram(series, opts(3.0, 40, 50));
    for (std::size_t k : {std::size_t{0}, std::size_t{1}, std::size_t{2}, std::size_t{4}}) {
      const Matrix exact = ou.stationary_cov * (-ou.gamma.transpose() * c.lags[k]).exp();
      std::vector<Matrix> per;
      for (const auto& b : c.batch_values) per.push_back(b[k]);
      const Matrix se = batch_standard_error(per);
      for (Eigen::Index r = 0; r < 2; ++r)
        for (Eigen::Index q = 0; q < 2; ++q) CHECK(std::abs(c.values[k](r, q) - exact(r, q)) <= 3.0 * se(r, q));
    }
  }
  SUBCASE("Green-Kubo estimates") {
    const auto est = integrate_estimates(correlogram(series, opts(10.0, 40, 4)));
    const auto cf = ou_closed_form(ou, Matrix::Identity(2, 2));
    for (Eigen::Index r = 0; r < 2; ++r)
      for (Eigen::Index q = 0; q < 2; ++q) {
        CHECK(std::abs(est.sigma_hat(r, q) - cf.sigma(r, q)) <= 3.0 * est.se_sigma(r, q));
        if (r != q) CHECK(std::abs(est.e_hat(r, q) - cf.e(r, q)) <= 3.0 * est.se_e(r, q));
      }
    CHECK(est.diagnostics.sigma_min_eigenvalue > 0.0);
  }
  SUBCASE("automatic truncation") {
    const double t_max = choose_t_max(series, 30.0, opts(30.0, 20, 10));
    CHECK(t_max > 1.0);
    CHECK(t_max < 30.0);
  }
}

TEST_CASE("direct E0 estimate") {
  const auto sys = nose_hoover_pair();
  Matrix a = Matrix::Identity(3, 3);
  a(1, 1) = a(2, 2) = -1.0;
  const Observable v = random_equivariant_observable(sys, a, 2, 3);
  const auto split = eigen_split(Involution(a));
  SUBCASE("symmetry failure carries the worst point") {
    Matrix wrong = Matrix::Identity(3, 3);
    const auto probe = sample_measure(sys, sys.burn_in_time + 20.0, 0.05, 2);
    try {
      estimate_e0(probe, v, sys.reversal, eigen_split(Involution(wrong)), opts(1.0), 1e-8);
      FAIL("no error");
    } catch (const SymmetryError& e) {
      CHECK(e.point().size() == sys.dim);
      CHECK(e.residual() > 0.0);
    }
  }
  SUBCASE("v- = 0 gives E0 = 0") {
    const Observable vp = with_equivariance(transform(split.pi_plus, v), a);
    const auto s = sample_series(sys, vp, 2000.0, 0.01, 5, 4);
    const auto e0 = estimate_e0(s, split, opts(20.0, 20, 2));
    CHECK(e0.e0.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("both routes agree") {
    const auto s = sample_series(sys, v, 1e5, 0.01, 5, 5);
    const auto o = opts(60.0, 40, 2);
    const auto est = integrate_estimates(correlogram(s, o));
    const auto e0 = estimate_e0(s, split, o);
    std::vector<Matrix> per;
    for (std::size_t b = 0; b < est.batch_e.size(); ++b) per.push_back(block_decompose(est.batch_sigma[b], est.batch_e[b], split).e0);
    const Matrix block_se = batch_standard_error(per);
    const Matrix block = block_decompose(est.sigma_hat, est.e_hat, split).e0;
    for (Eigen::Index c = 0; c < block.cols(); ++c) {
      const double combined = std::hypot(block_se(0, c), e0.se(0, c));
      CHECK(std::abs(block(0, c) - e0.e0(0, c)) <= 3.0 * combined);
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(est.sigma_hat);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
  }
}
