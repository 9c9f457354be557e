#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unsupported/Eigen/MatrixFunctions>

#include "levy/homogenise.hpp"
#include "levy/random.hpp"

using namespace levy;

namespace {

Matrix random_skew(std::size_t d, const CounterRng& rng, std::uint64_t& c) {
  const auto n = static_cast<Eigen::Index>(d);
  Matrix e = Matrix::Zero(n, n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index k = r + 1; k < n; ++k) {
      e(r, k) = 2.0 * rng.normal(c++);
      e(k, r) = -e(r, k);
    }
  return e;
}

// independent form of the correction: central differences of b, summed
// term by term as written
Vector correction_oracle(const SlowField& slow, const Matrix& e, const std::vector<double>& x) {
  const std::size_t d = slow.dim;
  std::vector<double> b(d * d), bp(d * d), bm(d * d), xp = x;
  slow.b(x, b);
  Vector out = Vector::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t a = 0; a < d; ++a) {
    const double h = 1e-5;
    xp[a] = x[a] + h;
    slow.b(xp, bp);
    xp[a] = x[a] - h;
    slow.b(xp, bm);
    xp[a] = x[a];
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t be = 0; be < d; ++be)
        for (std::size_t g = 0; g < d; ++g) {
          const double db = (bp[k * d + be] - bm[k * d + be]) / (2.0 * h);
          out(static_cast<Eigen::Index>(k)) +=
              0.5 * e(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(be)) * db * b[a * d + g];
        }
  }
  return out;
}

// b^{kl}(x) = x_k x_l + c_{kl} x_{(k+l) mod d}
SlowField quadratic_field(std::size_t d, const Matrix& c, bool exact_jacobian) {
  SlowField s;
  s.name = "quadratic";
  s.dim = d;
  s.s = Matrix::Identity(d, d);
  s.a_matrix = Matrix::Identity(d, d);
  s.reversible = false;
  s.b = [d, c](std::span<const double> x, std::span<double> out) {
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t l = 0; l < d; ++l)
        out[k * d + l] = x[k] * x[l] + c(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) * x[(k + l) % d];
  };
  if (exact_jacobian)
    s.b_jacobian = [d, c](std::span<const double> x, std::span<double> out) {
      std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d * d * d), 0.0);
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t k = 0; k < d; ++k)
          for (std::size_t l = 0; l < d; ++l) {
            double v = 0.0;
            if (a == k) v += x[l];
            if (a == l) v += x[k];
            if (a == (k + l) % d) v += c(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l));
            out[(a * d + k) * d + l] = v;
          }
    };
  return s;
}

Observable zero_coupling(std::size_t m, std::size_t d) {
  std::vector<Polynomial> comps(d, Polynomial::constant(m, 0.0));
  return polynomial_observable(comps);
}

std::vector<double> column(const Matrix& m, Eigen::Index c) {
  return std::vector<double>(m.col(c).data(), m.col(c).data() + m.rows());
}

}  // namespace

TEST_CASE("drift correction on the sparse testbed") {
  const CounterRng rng(17, 1);
  std::uint64_t c = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t d = 2 + static_cast<std::size_t>(rng.uniform(c++) * 4.0);
    // i in B, j outside B; B a random subset containing i
    std::size_t i = 1 + static_cast<std::size_t>(rng.uniform(c++) * static_cast<double>(d));
    std::size_t j = 1 + static_cast<std::size_t>(rng.uniform(c++) * static_cast<double>(d));
    if (j == i) j = i % d + 1;
    std::vector<std::size_t> fixed = {i};
    for (std::size_t k = 1; k <= d; ++k)
      if (k != i && k != j && rng.uniform(c++) < 0.5) fixed.push_back(k);
    const SlowField s = section6_field(d, fixed, i, j);
    const Matrix e = random_skew(d, rng, c);
    std::vector<double> x(d);
    for (auto& v : x) v = 3.0 * rng.normal(c++);
    const Vector got = drift_correction(s, e, x);
    Vector want = Vector::Zero(static_cast<Eigen::Index>(d));
    want(static_cast<Eigen::Index>(j - 1)) = 0.5 * e(static_cast<Eigen::Index>(d - 1), 0) * x[i - 1];
    worst = std::max(worst, (got - want).cwiseAbs().maxCoeff() / std::max(1.0, want.cwiseAbs().maxCoeff()));
    const auto r = slow_residuals(s, default_slow_probes(d));
    CHECK(r.a == 0.0);
    CHECK(r.b <= 1e-12 * std::max(1.0, r.scale));
  }
  CHECK(worst <= 1e-15);
}

TEST_CASE("drift correction vanishing cases") {
  const std::vector<double> x = {0.3, -1.2, 2.0};
  const SlowField s = section6_field(3, {1, 2}, 1, 3);
  CHECK(drift_correction(s, Matrix::Zero(3, 3), x).cwiseAbs().maxCoeff() == 0.0);
  Matrix cst(3, 3);
  cst << 1, 2, 3, 4, 5, 6, 7, 8, 10;
  const CounterRng rng(3, 2);
  std::uint64_t c = 0;
  const Matrix e = random_skew(3, rng, c);
  CHECK(drift_correction(constant_field(cst), e, x).cwiseAbs().maxCoeff() == 0.0);
  Matrix bad = e;
  bad(0, 1) += 0.1;
  CHECK_THROWS_AS(drift_correction(s, bad, x), StructuralError);
  CHECK_THROWS_AS(drift_correction(s, Matrix::Zero(2, 2), x), DimensionError);
}

TEST_CASE("drift correction against a term-by-term oracle") {
  const CounterRng rng(5, 3);
  std::uint64_t c = 0;
  for (std::size_t d : {2u, 3u, 4u}) {
    Matrix cm(d, d);
    for (Eigen::Index r = 0; r < cm.size(); ++r) cm.data()[r] = rng.normal(c++);
    const SlowField exact = quadratic_field(d, cm, true);
    const SlowField fd = quadratic_field(d, cm, false);
    for (int t = 0; t < 20; ++t) {
      const Matrix e = random_skew(d, rng, c);
      const Matrix e2 = random_skew(d, rng, c);
      std::vector<double> x(d);
      for (auto& v : x) v = rng.normal(c++);
      const Vector oracle = correction_oracle(exact, e, x);
      const Vector got = drift_correction(exact, e, x);
      const double scale = std::max(1.0, oracle.cwiseAbs().maxCoeff());
      CHECK((got - oracle).cwiseAbs().maxCoeff() <= 1e-8 * scale);
      CHECK((drift_correction(fd, e, x) - got).cwiseAbs().maxCoeff() <= 1e-6 * scale);
      // linear in E
      const Vector lin = drift_correction(exact, 2.0 * e - 0.5 * e2, x);
      const Vector sum = 2.0 * got - 0.5 * drift_correction(exact, e2, x);
      CHECK((lin - sum).cwiseAbs().maxCoeff() <= 1e-13 * std::max(1.0, lin.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("section6 field validation") {
  CHECK_THROWS_AS(section6_field(1), DimensionError);
  CHECK_THROWS_AS(section6_field(3, {1}, 2, 3), StructuralError);
  CHECK_THROWS_AS(section6_field(3, {1, 3}, 1, 3), StructuralError);
  CHECK_THROWS_AS(section6_field(3, {4}, 1, 2), DimensionError);
  const SlowField s = section6_field(2);
  CHECK(s.s(0, 0) == 1.0);
  CHECK(s.s(1, 1) == -1.0);
  CHECK(s.a_matrix(1, 1) == -1.0);
}

TEST_CASE("uncoupled fast-slow run follows the slow flow") {
  Matrix m(2, 2);
  m << -0.5, 1.0, -1.0, 0.2;
  FastSlowRun run;
  run.fast = harmonic();
  run.coupling = zero_coupling(run.fast.dim, 2);
  run.slow = with_linear_drift(constant_field(Matrix::Zero(2, 2)), m);
  run.xi = {1.0, -0.5};
  run.epsilon = 0.1;
  run.horizon = 1.5;
  run.step_fast = 0.01;
  const FastSlowPath p = simulate_fast_slow(run, 3);
  const Eigen::Vector2d want = (m * 1.5).exp() * Eigen::Vector2d(1.0, -0.5);
  CHECK(std::abs(p.terminal[0] - want(0)) <= 1e-10);
  CHECK(std::abs(p.terminal[1] - want(1)) <= 1e-10);

  // b set but v = 0 is the same flow
  run.slow = with_linear_drift(section6_field(2), m);
  const FastSlowPath q = simulate_fast_slow(run, 3);
  CHECK(q.terminal == p.terminal);
}

TEST_CASE("fast-slow runs are reproducible") {
  FastSlowRun run;
  run.fast = nose_hoover_pair();
  run.coupling = parse_polynomial_observable({"p1", "z1 + x2"}, run.fast);
  run.slow = section6_field(2);
  run.xi = {1.0, 0.0};
  run.epsilon = 0.2;
  run.horizon = 0.5;
  const auto a = simulate_fast_slow(run, 11);
  const auto b = simulate_fast_slow(run, 11);
  CHECK(a.terminal == b.terminal);
  CHECK(a.max_spot_defect <= 1e-6);
  const auto init = draw_initial_states(run, 3, 10, 1);
  CHECK(simulate_fast_slow(run, 999, init[1]).terminal == a.terminal);
  const std::vector<double> wrong(2, 0.0);
  CHECK_THROWS_AS(simulate_fast_slow(run, 1, wrong), DimensionError);

  const auto l1 = ensemble_fast_slow(run, 6, 40, 1);
  const auto l4 = ensemble_fast_slow(run, 6, 40, 4);
  CHECK(l1.samples == l4.samples);
  const auto shared = draw_initial_states(run, 6, 40, 3);
  CHECK(ensemble_fast_slow(run, 6, 40, 2, "", &shared).samples == l1.samples);

  FastSlowRun bad = run;
  bad.step_fast = 0.02;
  CHECK_THROWS(simulate_fast_slow(bad, 1));
  bad = run;
  bad.epsilon = 1.5;
  CHECK_THROWS(simulate_fast_slow(bad, 1));
}

TEST_CASE("sde: deterministic flow and Gaussian additive case") {
  Matrix m(2, 2);
  m << -0.5, 1.0, -1.0, 0.2;
  const SlowField flow = with_linear_drift(constant_field(Matrix::Identity(2, 2)), m);
  const std::vector<double> xi = {1.0, -0.5};
  const auto x = simulate_sde(flow, Matrix::Zero(2, 2), Matrix::Zero(2, 2), xi, 1.5, 1e-3, 1);
  const Eigen::Vector2d want = (m * 1.5).exp() * Eigen::Vector2d(1.0, -0.5);
  CHECK(std::abs(x[0] - want(0)) <= 1e-6);
  CHECK(std::abs(x[1] - want(1)) <= 1e-6);

  Matrix sigma(2, 2);
  sigma << 2.0, 0.5, 0.5, 1.0;
  const auto model = make_sde(additive_field(2), sigma, Matrix::Zero(2, 2));
  const auto law = ensemble_sde(model, xi, 2.0, 0.1, 10000, 100, 1);
  const Vector mean = law.mean();
  const Matrix cov = law.covariance();
  const double n = 10000.0;
  for (Eigen::Index k = 0; k < 2; ++k) CHECK(std::abs(mean(k) - xi[static_cast<std::size_t>(k)]) <= 3.0 * std::sqrt(2.0 * sigma(k, k) / n));
  for (Eigen::Index r = 0; r < 2; ++r)
    for (Eigen::Index c = 0; c < 2; ++c) {
      const Matrix target = 2.0 * sigma;
      const double se = std::sqrt((target(r, c) * target(r, c) + target(r, r) * target(c, c)) / n);
      CHECK(std::abs(cov(r, c) - target(r, c)) <= 3.0 * se);
    }
  CHECK(ensemble_sde(model, xi, 2.0, 0.1, 20, 100, 4).samples == ensemble_sde(model, xi, 2.0, 0.1, 20, 100, 1).samples);
}

TEST_CASE("sde: model validation") {
  Matrix skew(2, 2);
  skew << 0, 1, -1, 0;
  CHECK_THROWS_AS(make_sde(additive_field(2), Matrix::Identity(2, 2), Matrix::Identity(2, 2)), StructuralError);
  Matrix neg(2, 2);
  neg << 1, 0, 0, -0.5;
  CHECK_THROWS_AS(make_sde(additive_field(2), neg, skew), StructuralError);
  Matrix tiny(2, 2);
  tiny << 1, 0, 0, -1e-12;
  const auto m = make_sde(additive_field(2), tiny, skew);
  CHECK(m.floored);
  CHECK(m.sqrt_sigma(1, 1) == 0.0);
  CHECK_THROWS_AS(make_sde(additive_field(2), Matrix::Identity(3, 3), skew), DimensionError);
}

TEST_CASE("sde: the correction moves the discriminating component") {
  const SlowField s = section6_field(2);
  Matrix sigma(2, 2);
  sigma << 0.2, 0.0, 0.0, 0.6;
  Matrix e(2, 2);
  e << 0, -2, 2, 0;
  const std::vector<double> xi = {1.0, 0.0};
  const auto with_e = ensemble_sde(make_sde(s, sigma, e), xi, 1.0, 1e-3, 4000, 1, 1);
  const auto without = ensemble_sde(make_sde(s, sigma, Matrix::Zero(2, 2)), xi, 1.0, 1e-3, 4000, 1, 1);
  const auto cmp = compare_laws(with_e, without);
  CHECK(!cmp.passed);
  CHECK(std::abs(cmp.components[1].mean_diff) > 3.0 * cmp.components[1].pooled_se);
  // d/dt E x2 = E x1 and E x1 = exp(sigma22 t / 2)
  const double m1 = std::exp(0.3), m2 = (std::exp(0.3) - 1.0) / 0.3;
  const Vector mean = with_e.mean();
  const Matrix cov = with_e.covariance();
  CHECK(std::abs(mean(0) - m1) <= 3.0 * std::sqrt(cov(0, 0) / 4000.0) + 1e-3);
  CHECK(std::abs(mean(1) - m2) <= 3.0 * std::sqrt(cov(1, 1) / 4000.0) + 1e-3);
}

TEST_CASE("heun weak error on a linear test equation") {
  // dX = -X dt + dW, X_0 = 1: the scheme's exact second moment after n steps
  // is r^{2n} + (1 - h/2)^2 h sum_k r^{2k}, r = 1 - h + h^2/2
  const SlowField s = with_linear_drift(additive_field(1), -Matrix::Identity(1, 1));
  const auto model = make_sde(s, Matrix::Identity(1, 1), Matrix::Zero(1, 1));
  const std::vector<double> xi = {1.0};
  const double exact = std::exp(-2.0) + 0.5 * (1.0 - std::exp(-2.0));
  const std::size_t n = 400000;
  std::vector<double> bias;
  for (double h : {0.5, 0.25}) {
    const auto law = ensemble_sde(model, xi, 1.0, h, n, 7, 1);
    const Eigen::ArrayXd x2 = law.samples.col(0).array().square();
    const double m2 = x2.mean();
    const double se = std::sqrt((x2 - m2).square().mean() / static_cast<double>(n));
    const double r = 1.0 - h + 0.5 * h * h;
    const auto steps = static_cast<int>(std::round(1.0 / h));
    double geo = 0.0;
    for (int k = 0; k < steps; ++k) geo += std::pow(r, 2 * k);
    const double scheme = std::pow(r, 2 * steps) + (1.0 - 0.5 * h) * (1.0 - 0.5 * h) * h * geo;
    CHECK(std::abs(m2 - scheme) <= 3.0 * se);
    bias.push_back(std::abs(m2 - exact));
  }
  CHECK(bias[0] / bias[1] >= 2.0 / 1.6);
}

TEST_CASE("ks test") {
  CHECK(ks_q(0.0) == 1.0);
  CHECK(ks_q(1.3581) == doctest::Approx(0.05).epsilon(1e-3));
  CHECK(ks_q(1.6276) == doctest::Approx(0.01).epsilon(2e-3));
  const std::vector<double> a = {0.1, 0.5, 0.9, 1.3};
  CHECK(ks_two_sample(a, a).statistic == 0.0);
  CHECK(ks_two_sample(a, a).p_value == 1.0);
  CHECK(ks_two_sample({0.0, 1.0}, {2.0, 3.0}).statistic == 1.0);
  CHECK_THROWS(ks_two_sample({}, a));

  // calibration under the null: same law, disjoint seeds
  const auto model = make_sde(additive_field(1), Matrix::Identity(1, 1), Matrix::Zero(1, 1));
  const std::vector<double> xi = {0.0};
  int pass = 0;
  for (int t = 0; t < 100; ++t) {
    const auto l = ensemble_sde(model, xi, 1.0, 0.5, 500, 1000000 + 2000 * static_cast<std::uint64_t>(t), 1);
    const auto r = ensemble_sde(model, xi, 1.0, 0.5, 500, 1001000 + 2000 * static_cast<std::uint64_t>(t), 1);
    if (ks_two_sample(column(l.samples, 0), column(r.samples, 0)).p_value > 0.01) ++pass;
  }
  CHECK(pass >= 95);
}

TEST_CASE("compare_laws") {
  const auto model = make_sde(additive_field(2), Matrix::Identity(2, 2), Matrix::Zero(2, 2));
  const std::vector<double> xi = {0.0, 0.0};
  const auto law = ensemble_sde(model, xi, 1.0, 0.5, 300, 5, 1);
  const auto same = compare_laws(law, law);
  CHECK(same.passed);
  CHECK(same.failing.empty());
  for (const auto& c : same.components) {
    CHECK(c.mean_diff == 0.0);
    CHECK(c.ks_statistic == 0.0);
  }
  CHECK(same.cov_diff.cwiseAbs().maxCoeff() == 0.0);
  const std::vector<double> shifted = {0.0, 1.0};
  const auto other = ensemble_sde(model, shifted, 1.0, 0.5, 300, 900, 1);
  const auto cmp = compare_laws(law, other);
  CHECK(!cmp.passed);
  REQUIRE(cmp.failing.size() == 1);
  CHECK(cmp.failing[0] == 1);
  const auto one = ensemble_sde(make_sde(additive_field(1), Matrix::Identity(1, 1), Matrix::Zero(1, 1)), std::vector<double>{0.0},
                                1.0, 0.5, 10, 1, 1);
  CHECK_THROWS_AS(compare_laws(law, one), DimensionError);
}

TEST_CASE("OU-driven fast-slow limit") {
  Matrix gamma(2, 2);
  gamma << 1, -1, 1, 1;
  const OUSurrogate ou = make_ou(gamma, std::sqrt(2.0) * Matrix::Identity(2, 2));
  const GreenKuboPair gk = ou_closed_form(ou, Matrix::Identity(2, 2));
  const std::size_t n = 3000;

  SUBCASE("additive coupling has covariance Sigma T") {
    const std::vector<double> xi = {0.5, -0.5};
    Matrix x(n, 2);
    for (std::size_t k = 0; k < n; ++k) {
      const auto t = simulate_fast_slow_ou(ou, Matrix::Identity(2, 2), additive_field(2), 0.05, xi, 1.0, 0.05, 500 + k);
      x(static_cast<Eigen::Index>(k), 0) = t[0] - xi[0];
      x(static_cast<Eigen::Index>(k), 1) = t[1] - xi[1];
    }
    const Matrix cov = x.transpose() * x / static_cast<double>(n);
    for (Eigen::Index r = 0; r < 2; ++r)
      for (Eigen::Index c = 0; c < 2; ++c) {
        const double se = std::sqrt((gk.sigma(r, c) * gk.sigma(r, c) + gk.sigma(r, r) * gk.sigma(c, c)) / static_cast<double>(n));
        CHECK(std::abs(cov(r, c) - gk.sigma(r, c)) <= 3.0 * se);
      }
  }

  SUBCASE("sparse testbed: fast-slow agrees with the corrected SDE, not with E = 0") {
    const SlowField s = section6_field(2);
    const std::vector<double> xi = {1.0, 0.0};
    EnsembleLaw fs;
    fs.samples.resize(static_cast<Eigen::Index>(n), 2);
    for (std::size_t k = 0; k < n; ++k) {
      const auto t = simulate_fast_slow_ou(ou, Matrix::Identity(2, 2), s, 0.05, xi, 1.0, 0.05, 9000 + k);
      fs.samples(static_cast<Eigen::Index>(k), 0) = t[0];
      fs.samples(static_cast<Eigen::Index>(k), 1) = t[1];
    }
    const auto corrected = ensemble_sde(make_sde(s, gk.sigma, gk.e), xi, 1.0, 1e-3, n, 1, 1);
    const auto control = ensemble_sde(make_sde(s, gk.sigma, Matrix::Zero(2, 2)), xi, 1.0, 1e-3, n, 1, 1);
    const auto good = compare_laws(fs, corrected);
    const auto bad = compare_laws(fs, control);
    CHECK(good.passed);
    CHECK(!bad.passed);
    CHECK(std::find(bad.failing.begin(), bad.failing.end(), 1u) != bad.failing.end());
  }
}
