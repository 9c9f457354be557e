#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include "levy/fast_system.hpp"
#include "levy/observable.hpp"
#include "levy/ou.hpp"
#include "levy/random.hpp"
#include "levy/trajectory_io.hpp"

using namespace levy;

namespace {

// mean and batch-means standard error of one coordinate
std::pair<double, double> batch_mean(const Trajectory& t, std::size_t coord, std::size_t batches = 20) {
  const std::size_t n = t.size() / batches;
  std::vector<double> means(batches, 0.0);
  for (std::size_t b = 0; b < batches; ++b) {
    for (std::size_t i = 0; i < n; ++i) means[b] += t.point(b * n + i)[coord];
    means[b] /= static_cast<double>(n);
  }
  double m = 0.0;
  for (double x : means) m += x;
  m /= static_cast<double>(batches);
  double v = 0.0;
  for (double x : means) v += (x - m) * (x - m);
  v /= static_cast<double>(batches - 1);
  return {m, std::sqrt(v / static_cast<double>(batches))};
}

// Simpson quadrature of V C0 exp(-Gamma^T t) V^T +- its transpose; n even
std::pair<Matrix, Matrix> quadrature(const OUSurrogate& ou, const Matrix& v, double t_end, std::size_t n) {
  const double h = t_end / static_cast<double>(n);
  const Matrix step = (-ou.gamma.transpose() * h).exp();
  Matrix prop = Matrix::Identity(ou.gamma.rows(), ou.gamma.cols());
  Matrix acc = Matrix::Zero(v.rows(), v.rows());
  for (std::size_t k = 0; k <= n; ++k) {
    const Matrix c = v * ou.stationary_cov * prop * v.transpose();
    acc += (k == 0 || k == n ? 1.0 : k % 2 ? 4.0 : 2.0) * h / 3.0 * c;
    prop = prop * step;
  }
  return {acc + acc.transpose(), acc - acc.transpose()};
}

}  // namespace

TEST_CASE("integrate") {
  SUBCASE("zero field keeps the state") {
    const auto sys = null_system(3);
    const std::vector<double> y0 = {1.0, -2.0, 0.5};
    const auto t = integrate(sys, y0, 1.0, 0.1);
    CHECK(t.size() == 11);
    for (std::size_t i = 0; i < t.size(); ++i)
      for (std::size_t k = 0; k < 3; ++k) CHECK(t.point(i)[k] == y0[k]);
  }
  SUBCASE("Nose-Hoover single step against step halving") {
    const auto sys = nose_hoover();
    const std::vector<double> y0 = {1.0, 0.0, 0.0};
    const double d1 = step_halving_defect(sys, y0, 0.01);
    const double d2 = step_halving_defect(sys, y0, 0.005);
    CHECK(d1 < 1e-10);
    // local error is O(h^5)
    CHECK(d1 / d2 > 16.0);
  }
  SUBCASE("harmonic oscillator returns after one period") {
    const auto sys = harmonic();
    const std::vector<double> y0 = {1.0, 0.0};
    const auto t = integrate(sys, y0, 2.0 * std::numbers::pi, 0.01);
    const auto end = t.point(t.size() - 1);
    CHECK(std::abs(end[0] - 1.0) < 1e-8);
    CHECK(std::abs(end[1]) < 1e-8);
  }
  SUBCASE("bit reproducible") {
    const auto sys = nose_hoover_pair();
    const auto a = integrate(sys, sys.default_initial, 20.0, 0.01);
    const auto b = integrate(sys, sys.default_initial, 20.0, 0.01);
    CHECK(a.data == b.data);
  }
  SUBCASE("blow-up reports its time") {
    FastSystem s;
    s.dim = 1;
    s.field = [](std::span<const double> y, std::span<double> out) { out[0] = y[0] * y[0]; };
    const std::vector<double> y0 = {1.0};
    try {
      integrate(s, y0, 5.0, 0.001);
      FAIL("no error");
    } catch (const NumericalError& e) {
      CHECK(e.time() > 0.9);
      CHECK(e.time() < 2.5);
    }
  }
  SUBCASE("bad step") {
    CHECK_THROWS(integrate(harmonic(), std::vector<double>{1.0, 0.0}, 1.0, 0.0));
  }
}

TEST_CASE("sample_measure") {
  const auto sys = nose_hoover_pair();
  SUBCASE("length bookkeeping") {
    const auto t = sample_measure(sys, sys.burn_in_time + 10.0, 0.01, 3);
    CHECK(t.size() == 1000);
    CHECK(t.start_time == sys.burn_in_time);
  }
  SUBCASE("same seed, same trajectory") {
    const auto a = sample_measure(sys, sys.burn_in_time + 5.0, 0.01, 4);
    const auto b = sample_measure(sys, sys.burn_in_time + 5.0, 0.01, 4);
    const auto c = sample_measure(sys, sys.burn_in_time + 5.0, 0.01, 5);
    CHECK(a.data == b.data);
    CHECK(a.data != c.data);
  }
  SUBCASE("duration must exceed burn-in") {
    CHECK_THROWS(sample_measure(sys, sys.burn_in_time, 0.01, 1));
  }
  SUBCASE("spot check of 1% of the steps") {
    const auto t = sample_measure(sys, sys.burn_in_time + 50.0, 0.01, 6);
    const auto sc = spot_check(sys, t, 0.01, 2);
    CHECK(sc.checked >= 40);
    CHECK(sc.max_defect < 1e-7);
    CHECK(sc.max_replay_error < 1e-12);
  }
}

TEST_CASE("R-antisymmetric averages vanish") {
  SUBCASE("Nose-Hoover momentum") {
    const auto sys = nose_hoover();
    const auto t = sample_measure(sys, sys.burn_in_time + 2e4, 0.01, 8);
    const auto [m, se] = batch_mean(t, 1);
    CHECK(std::abs(m) <= 3.0 * se);
  }
  SUBCASE("pair: p1, z1, x2") {
    const auto sys = nose_hoover_pair();
    const auto t = sample_measure(sys, sys.burn_in_time + 2e4, 0.01, 9);
    for (std::size_t c : {1, 2, 7}) {
      const auto [m, se] = batch_mean(t, c);
      CHECK(std::abs(m) <= 3.0 * se);
    }
  }
}

TEST_CASE("reversibility_residual") {
  SUBCASE("built-in reversible systems vanish identically") {
    for (const auto& sys : {nose_hoover(), nose_hoover_pair(), nose_hoover_pair(0.3, 0.0, 1.5), harmonic()}) {
      CHECK(reversibility_residual(sys, default_probes(sys)) == 0.0);
      CHECK(involution_residual(sys, default_probes(sys)) == 0.0);
    }
  }
  SUBCASE("mis-specified reversal") {
    auto sys = nose_hoover();
    sys.reversal = AffineMap::diagonal({-1.0, 1.0, 1.0});
    Trajectory one;
    one.dim = 3;
    one.step = 1.0;
    one.data = {1.0, 1.0, 1.0};
    CHECK(reversibility_residual(sys, one) > 0.1);
  }
  SUBCASE("Lorenz-63 is not reversible") {
    const auto sys = lorenz63();
    CHECK(reversibility_residual(sys, default_probes(sys)) > 1.0);
  }
}

TEST_CASE("OU surrogate") {
  SUBCASE("Lyapunov identity and stability") {
    Matrix g(2, 2);
    g << 1, -1, 1, 1;
    const auto ou = make_ou(g, std::sqrt(2.0) * Matrix::Identity(2, 2));
    CHECK(lyapunov_residual(ou) < 1e-10);
    CHECK((ou.stationary_cov - Matrix::Identity(2, 2)).norm() < 1e-12);
    Matrix bad(2, 2);
    bad << -1, 0, 0, 1;
    CHECK_THROWS_AS(make_ou(bad, Matrix::Identity(2, 2)), StructuralError);
  }
  SUBCASE("rotating example against quadrature") {
    for (double w : {0.0, 0.5, 1.0, 2.0}) {
      Matrix g(2, 2);
      g << 1, -w, w, 1;
      const auto ou = make_ou(g, std::sqrt(2.0) * Matrix::Identity(2, 2));
      const auto cf = ou_closed_form(ou, Matrix::Identity(2, 2));
      Matrix j(2, 2);
      j << 0, -1, 1, 0;
      CHECK((cf.sigma - 2.0 / (1 + w * w) * Matrix::Identity(2, 2)).norm() < 1e-12);
      CHECK((cf.e - 2.0 * w / (1 + w * w) * j).norm() < 1e-12);
      const auto [qs, qe] = quadrature(ou, Matrix::Identity(2, 2), 40.0, 40000);
      CHECK((qs - cf.sigma).norm() < 1e-6);
      CHECK((qe - cf.e).norm() < 1e-6);
    }
  }
  SUBCASE("randomized stable Gamma against quadrature") {
    const CounterRng rng(17);
    std::uint64_t k = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const Eigen::Index d = 1 + trial % 3;
      Matrix g(d, d), s(d, d), v(d, d);
      for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index c = 0; c < d; ++c) {
          g(i, c) = 0.5 * rng.normal(k++);
          s(i, c) = rng.normal(k++);
          v(i, c) = rng.normal(k++);
        }
      g += (1.0 + g.norm()) * Matrix::Identity(d, d);
      const auto ou = make_ou(g, s);
      Eigen::EigenSolver<Matrix> es(g, false);
      const double rate = es.eigenvalues().real().minCoeff();
      const auto cf = ou_closed_form(ou, v);
      const auto [qs, qe] = quadrature(ou, v, 40.0 / rate, 20000);
      const double scale = std::max(1.0, cf.sigma.norm());
      CHECK((qs - cf.sigma).norm() <= 1e-6 * scale);
      CHECK((qe - cf.e).norm() <= 1e-6 * scale);
      if (d == 1) CHECK(cf.e(0, 0) == 0.0);
    }
  }
  SUBCASE("symmetric Gamma gives E = 0") {
    Matrix g(2, 2);
    g << 2, 0.5, 0.5, 1;
    const auto cf = ou_closed_form(make_ou(g, Matrix::Identity(2, 2)), Matrix::Identity(2, 2));
    CHECK(cf.e.norm() < 1e-12);
  }
  SUBCASE("simulated covariance") {
    Matrix g(2, 2);
    g << 1, -1, 1, 1;
    const auto ou = make_ou(g, std::sqrt(2.0) * Matrix::Identity(2, 2));
    const auto t = simulate_ou(ou, 200000, 0.05, 3);
    const auto [m, se] = batch_mean(t, 0);
    CHECK(std::abs(m) <= 3.0 * se);
    double c00 = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) c00 += t.point(i)[0] * t.point(i)[0];
    CHECK(c00 / static_cast<double>(t.size()) == doctest::Approx(1.0).epsilon(0.05));
  }
}

TEST_CASE("trajectory files") {
  const auto sys = harmonic();
  const auto t = integrate(sys, std::vector<double>{1.0, 0.0}, 1.0, 0.1);
  const auto path = (std::filesystem::temp_directory_path() / "levy_traj_test.fstj").string();
  write_trajectory(path, t);
  const auto back = read_trajectory(path);
  CHECK(back.dim == 2);
  CHECK(back.step == t.step);
  CHECK(back.data == t.data);
  {
    TrajectoryWriter w(path, 2, 0.1);
    w.append(t);
    w.append(t.point(0));
    CHECK(w.records() == t.size() + 1);
  }
  CHECK(read_trajectory(path).size() == t.size() + 1);
  std::remove(path.c_str());
}
