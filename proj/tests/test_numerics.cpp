#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "stellar/numerics.hpp"

using namespace stellar;

TEST_CASE("kl_diag_gaussian identical distributions is exactly zero") {
  DiagGaussian q({0.3, -1.2, 4.0}, {1.0, 0.5, 2.0});
  CHECK(std::abs(kl_diag_gaussian(q, q)) < 1e-12);
}

TEST_CASE("kl_diag_gaussian matches quadrature oracle") {
  // KL(N(1,1) || N(0,1)) = 0.5
  const double o1 = oracle::kl_gaussian_1d_quadrature(1.0, 1.0, 0.0, 1.0);
  CHECK(o1 == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(kl_diag_gaussian(DiagGaussian({1.0}, {1.0}), DiagGaussian({0.0}, {1.0})) ==
        doctest::Approx(o1).epsilon(1e-6));

  // KL(N(0,2) || N(0,1)) = 0.5*(2 - 1 - ln 2)
  const double o2 = oracle::kl_gaussian_1d_quadrature(0.0, 2.0, 0.0, 1.0);
  CHECK(o2 == doctest::Approx(0.5 * (2.0 - 1.0 - std::log(2.0))).epsilon(1e-6));
  CHECK(kl_diag_gaussian(DiagGaussian({0.0}, {2.0}), DiagGaussian({0.0}, {1.0})) ==
        doctest::Approx(o2).epsilon(1e-6));
}

TEST_CASE("kl_diag_gaussian non-negative on random draws") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::uniform_real_distribution<double> uv(0.05, 4.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Vec mq(3), vq(3), mp(3), vp(3);
    for (int d = 0; d < 3; ++d) {
      mq[d] = u(rng);
      vq[d] = uv(rng);
      mp[d] = u(rng);
      vp[d] = uv(rng);
    }
    CHECK(kl_diag_gaussian(DiagGaussian(mq, vq), DiagGaussian(mp, vp)) >= 0.0);
  }
}

TEST_CASE("kl_diag_gaussian rejects dimension mismatch") {
  CHECK_THROWS_AS(kl_diag_gaussian(DiagGaussian({0.0}, {1.0}), DiagGaussian({0.0, 0.0}, {1.0, 1.0})),
                  std::invalid_argument);
}

TEST_CASE("DiagGaussian floors variance") {
  DiagGaussian g({0.0}, {1e-12});
  CHECK(g.var[0] == kEpsilonVar);
}

TEST_CASE("softmax basics") {
  Vec p = softmax({0.0, 0.0});
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));

  Vec q = softmax({1000.0, 0.0});
  CHECK(q[0] == doctest::Approx(1.0));
  CHECK(q[1] == doctest::Approx(0.0));
  CHECK(std::isfinite(q[0]));

  Vec r = softmax({std::log(1.0), std::log(2.0), std::log(3.0)});
  CHECK(r[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(r[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
  CHECK(r[2] == doctest::Approx(3.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and normalization") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    Vec logits(5);
    for (auto& x : logits) x = u(rng);
    Vec a = softmax(logits);
    double total = 0.0;
    for (double x : a) {
      CHECK(x > 0.0);
      CHECK(x < 1.0);
      total += x;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    Vec shifted = logits;
    for (auto& x : shifted) x += 123.456;
    Vec b = softmax(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
  }
}

TEST_CASE("digamma reference values") {
  constexpr double kEulerGamma = 0.5772156649015329;
  CHECK(digamma(1.0) == doctest::Approx(-kEulerGamma).epsilon(1e-12));
  CHECK(digamma(0.5) == doctest::Approx(-kEulerGamma - 2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(digamma(2.0) == doctest::Approx(1.0 - kEulerGamma).epsilon(1e-12));
  // Recurrence psi(x+1) = psi(x) + 1/x
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.1, 20.0);
  for (int i = 0; i < 100; ++i) {
    const double x = u(rng);
    CHECK(digamma(x + 1.0) == doctest::Approx(digamma(x) + 1.0 / x).epsilon(1e-10));
  }
}

TEST_CASE("finite_difference_check quadratic loss") {
  auto loss = [](const Vec& x) {
    double s = 0.0;
    for (double v : x) s += 0.5 * v * v;
    return s;
  };
  auto report = finite_difference_check(loss, {1.0, 2.0}, {1.0, 2.0}, 1e-5, 1e-6);
  CHECK(report.passed);
  CHECK(report.param_count == 2);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("finite_difference_check sin loss") {
  auto loss = [](const Vec& x) {
    double s = 0.0;
    for (double v : x) s += std::sin(v);
    return s;
  };
  auto report = finite_difference_check(loss, {0.0, M_PI / 2.0}, {1.0, 0.0}, 1e-5, 1e-4);
  CHECK(report.passed);
}

TEST_CASE("finite_difference_check rejects wrong gradient") {
  auto loss = [](const Vec& x) {
    double s = 0.0;
    for (double v : x) s += 0.5 * v * v;
    return s;
  };
  auto report = finite_difference_check(loss, {1.0, 2.0}, {0.0, 0.0}, 1e-5, 1e-4);
  CHECK_FALSE(report.passed);
}

TEST_CASE("finite_difference_check reports non-finite loss with parameter index") {
  auto loss = [](const Vec& x) { return x[1] > 1.5 ? std::nan("") : x[0]; };
  CHECK_THROWS_WITH_AS(finite_difference_check(loss, {0.0, 1.5}, {1.0, 0.0}, 1e-2, 1e-4),
                       doctest::Contains("parameter 1"), std::runtime_error);
}

TEST_CASE("log_density matches direct evaluation") {
  DiagGaussian g({1.0, -1.0}, {2.0, 0.5});
  const Vec x{0.0, 0.0};
  double expected = 0.0;
  expected += -0.5 * (std::log(2.0 * M_PI * 2.0) + 1.0 / 2.0);
  expected += -0.5 * (std::log(2.0 * M_PI * 0.5) + 1.0 / 0.5);
  CHECK(log_density(x, g) == doctest::Approx(expected).epsilon(1e-12));
}
