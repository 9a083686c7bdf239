#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "pseudoct/emission.hpp"
#include "pseudoct/errors.hpp"

using namespace pseudoct;

namespace {

std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

Matrix random_rows(Rng& rng, int n, int d, double scale = 1.0) {
  Matrix m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = scale * rng.normal();
  return m;
}

}  // namespace

TEST_CASE("standard normal mode") {
  const GaussianComponent c(Vector::Zero(1), Matrix::Identity(1, 1));
  const Vector x = Vector::Zero(1);
  CHECK(c.log_density(as_span(x)) == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
}

TEST_CASE("2D identity covariance at the mean") {
  Vector mu(2);
  mu << 3.0, -1.0;
  const GaussianComponent c(mu, Matrix::Identity(2, 2));
  CHECK(c.log_density(as_span(mu)) == doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
}

TEST_CASE("joint and marginal densities match the explicit-inverse oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(3));
    const GaussianComponent c = oracle::random_component(rng, d, 3.0, 1.0 + 5.0 * rng.uniform());
    for (int r = 0; r < 5; ++r) {
      Vector x(d);
      for (int i = 0; i < d; ++i) x(i) = c.mu()(i) + 2.0 * rng.normal();
      CHECK(std::abs(c.log_density(as_span(x)) - oracle::log_normal(x, c.mu(), c.sigma())) < 1e-10);
      const Vector xs = x.tail(d - 1);
      CHECK(std::abs(c.log_density_x(as_span(xs)) - oracle::log_normal_x(xs, c)) < 1e-10);
      CHECK(std::abs(c.conditional_mean_y(as_span(xs)) - oracle::conditional_mean(xs, c)) < 1e-9);
    }
  }
}

TEST_CASE("covariate marginal with one covariate") {
  Vector mu(2);
  mu << 0.0, 3.0;
  Matrix s(2, 2);
  s << 2.0, 0.5, 0.5, 4.0;
  const GaussianComponent c(mu, s);
  const Vector x = Vector::Constant(1, 3.0);
  CHECK(c.log_density_x(as_span(x)) == doctest::Approx(-0.5 * std::log(8.0 * std::numbers::pi)).epsilon(1e-14));
}

TEST_CASE("diagonal covariance factorizes into univariate densities") {
  Vector mu(4);
  mu << 1.0, -2.0, 0.5, 7.0;
  Vector var(4);
  var << 2.0, 0.3, 5.0, 1.5;
  const GaussianComponent c(mu, Matrix(var.asDiagonal()));
  Vector x(3);
  x << -1.0, 2.0, 6.0;
  double expect = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double z = x(i) - mu(i + 1);
    expect += -0.5 * std::log(2.0 * std::numbers::pi * var(i + 1)) - 0.5 * z * z / var(i + 1);
  }
  CHECK(c.log_density_x(as_span(x)) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("marginal equals the joint integrated over the target") {
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const GaussianComponent c = oracle::random_component(rng, 2, 2.0, 1.0 + rng.uniform());
    const double sd = std::sqrt(c.sigma()(0, 0));
    const Vector xs = Vector::Constant(1, c.mu()(1) + rng.normal());
    // Composite Simpson over +-12 sd.
    const int steps = 4000;
    const double lo = c.mu()(0) - 12.0 * sd, hi = c.mu()(0) + 12.0 * sd, h = (hi - lo) / steps;
    double integral = 0.0;
    for (int i = 0; i <= steps; ++i) {
      Vector obs(2);
      obs << lo + i * h, xs(0);
      const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      integral += w * std::exp(c.log_density(as_span(obs)));
    }
    integral *= h / 3.0;
    const double marginal = std::exp(c.log_density_x(as_span(xs)));
    CHECK(std::abs(integral - marginal) / marginal < 1e-6);
  }
}

TEST_CASE("conditional mean special cases") {
  Vector mu(3);
  mu << 100.0, 1.0, 2.0;
  Matrix s = Matrix::Identity(3, 3);
  s(1, 2) = s(2, 1) = 0.3;
  const GaussianComponent independent(mu, s);
  Vector x(2);
  x << 5.0, -4.0;
  CHECK(independent.conditional_mean_y(as_span(x)) == 100.0);

  Matrix s2 = s;
  s2(0, 1) = s2(1, 0) = 0.4;
  const GaussianComponent linked(mu, s2);
  const Vector mx = mu.tail(2);
  CHECK(linked.conditional_mean_y(as_span(mx)) == doctest::Approx(100.0).epsilon(1e-15));
}

TEST_CASE("conditional mean agrees with a rejection-sampling estimate") {
  Rng rng(13);
  Vector mu(2);
  mu << 10.0, -3.0;
  Matrix s(2, 2);
  s << 4.0, 1.5, 1.5, 2.0;
  const GaussianComponent c(mu, s);
  const Eigen::MatrixXd dense = s;
  const Eigen::LLT<Eigen::MatrixXd> llt(dense);
  const Eigen::MatrixXd l = llt.matrixL();
  const double x0 = -2.0, window = 0.05;
  double sum = 0.0, sq = 0.0;
  int kept = 0;
  for (int i = 0; i < 2'000'000; ++i) {
    Eigen::Vector2d e(rng.normal(), rng.normal());
    const Eigen::Vector2d draw = mu + l * e;
    if (std::abs(draw(1) - x0) > window) continue;
    sum += draw(0);
    sq += draw(0) * draw(0);
    ++kept;
  }
  REQUIRE(kept > 1000);
  const double mean = sum / kept;
  const double se = std::sqrt((sq / kept - mean * mean) / kept);
  const Vector x = Vector::Constant(1, x0);
  // The window adds a bias of order slope * window^2, far below 4 se here.
  CHECK(std::abs(c.conditional_mean_y(as_span(x)) - mean) < 4.0 * se);
}

TEST_CASE("weighted MLE of a single observation floors the covariance") {
  Matrix obs(1, 3);
  obs << 1.0, 2.0, 3.0;
  const std::vector<double> w{1.0};
  const GaussianComponent c = weighted_mle(obs, w);
  CHECK(c.mu() == obs.row(0).transpose());
  CHECK(c.jitter() == doctest::Approx(kJitterStart));
  CHECK(c.sigma() == Matrix(kJitterStart * Matrix::Identity(3, 3)));
}

TEST_CASE("equal weights give the sample moments") {
  Rng rng(14);
  const Matrix obs = random_rows(rng, 40, 3, 2.0);
  const std::vector<double> w(40, 0.25);
  const GaussianComponent c = weighted_mle(obs, w);
  const Vector mean = obs.colwise().mean();
  const Matrix centered = obs.rowwise() - mean.transpose();
  const Matrix cov = centered.transpose() * centered / 40.0;
  CHECK((c.mu() - mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((c.sigma() - cov).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("weighted MLE matches the naive two-pass oracle") {
  Rng rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix obs = random_rows(rng, 50, 4, 10.0);
    std::vector<double> w(50);
    for (auto& x : w) x = rng.uniform();
    const GaussianComponent c = weighted_mle(obs, w);
    const auto [mu, s] = oracle::weighted_moments(obs, w);
    CHECK((c.mu() - mu).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((c.sigma() - s).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("degenerate inputs") {
  Matrix obs(2, 2);
  obs << 1.0, 2.0, 3.0, 4.0;
  const std::vector<double> tiny{1e-10, 1e-10};
  CHECK_THROWS_AS(weighted_mle(obs, tiny), DegenerateClassError);
  const std::vector<double> negative{1.0, -1.0};
  CHECK_THROWS_AS(weighted_mle(obs, negative), DataError);

  Matrix asym(2, 2);
  asym << 1.0, 0.5, 0.4, 1.0;
  CHECK_THROWS_AS(GaussianComponent(Vector::Zero(2), asym), DataError);
  Matrix indefinite(2, 2);
  indefinite << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(GaussianComponent(Vector::Zero(2), indefinite), DegenerateClassError);

  // Rank-deficient but rescuable by jitter.
  Matrix singular(2, 2);
  singular << 1.0, 1.0, 1.0, 1.0;
  const GaussianComponent rescued(Vector::Zero(2), singular);
  CHECK(rescued.jitter() > 0.0);
  CHECK(rescued.jitter() <= kJitterMax);
}

TEST_CASE("emission table is independent of the worker count") {
  Rng rng(16);
  std::vector<GaussianComponent> comps;
  for (int k = 0; k < 3; ++k) comps.push_back(oracle::random_component(rng, 3));
  const Matrix obs = random_rows(rng, 10000, 3);
  const Matrix one = log_emissions(comps, obs, EmissionMode::joint, 1);
  const Matrix four = log_emissions(comps, obs, EmissionMode::joint, 4);
  CHECK(one == four);
  const Matrix x_only = log_emissions(comps, obs.rightCols(2), EmissionMode::x_only, 3);
  for (int i = 0; i < 20; ++i) {
    const Vector x = obs.row(i).tail(2).transpose();
    CHECK(std::abs(x_only(i, 1) - oracle::log_normal_x(x, comps[1])) < 1e-10);
  }
  CHECK_THROWS_AS(log_emissions(comps, obs.rightCols(2), EmissionMode::joint), DataError);
}

TEST_CASE("combined prediction is the weighted sum of conditional means") {
  Rng rng(17);
  std::vector<GaussianComponent> comps;
  for (int k = 0; k < 2; ++k) comps.push_back(oracle::random_component(rng, 3));
  const Matrix x = random_rows(rng, 6, 2);
  Matrix w(6, 2);
  for (int i = 0; i < 6; ++i) {
    w(i, 0) = rng.uniform();
    w(i, 1) = 1.0 - w(i, 0);
  }
  const auto pred = combine_predictions(w, comps, x);
  for (int i = 0; i < 6; ++i) {
    const Vector xi = x.row(i).transpose();
    const double expect = w(i, 0) * oracle::conditional_mean(xi, comps[0]) + w(i, 1) * oracle::conditional_mean(xi, comps[1]);
    CHECK(std::abs(pred[static_cast<std::size_t>(i)] - expect) < 1e-10);
  }
}

TEST_CASE("row log-sum-exp is stable") {
  Matrix m(2, 3);
  m << 1000.0, 1000.0, 1000.0, -1000.0, -1001.0, -1002.0;
  const Vector r = log_sum_exp_rows(m);
  CHECK(r(0) == doctest::Approx(1000.0 + std::log(3.0)).epsilon(1e-15));
  CHECK(r(1) == doctest::Approx(-1000.0 + std::log(1.0 + std::exp(-1.0) + std::exp(-2.0))).epsilon(1e-15));
}
