#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "pseudoct/errors.hpp"
#include "pseudoct/gmm.hpp"
#include "pseudoct/hmm.hpp"

using namespace pseudoct;

namespace {

double max_abs(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

std::span<const double> row_span(const Matrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

Matrix random_obs(Rng& rng, int n, int d, double scale = 3.0) {
  Matrix m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = scale * rng.normal();
  return m;
}

oracle::PathResult enumerate(const HmmParams& p, const Matrix& obs, EmissionMode mode) {
  return oracle::enumerate_paths(
      p.pi, p.trans,
      [&](int t, int k) {
        const Vector x = obs.row(t).transpose();
        const auto& c = p.components[static_cast<std::size_t>(k)];
        return mode == EmissionMode::joint ? oracle::log_normal(x, c.mu(), c.sigma()) : oracle::log_normal_x(x, c);
      },
      static_cast<int>(obs.rows()));
}

}  // namespace

TEST_CASE("single state: gamma is one and loglik sums the densities") {
  Rng rng(3);
  HmmParams p = fixture::random_hmm(rng, 1, 2);
  const Matrix obs = random_obs(rng, 6, 2);
  const auto fb = forward_backward(p, obs, EmissionMode::joint);
  double expect = 0.0;
  for (Eigen::Index t = 0; t < obs.rows(); ++t) expect += p.components[0].log_density(row_span(obs, t));
  CHECK(max_abs(fb.gamma, Matrix::Ones(6, 1)) < 1e-15);
  CHECK(fb.loglik == doctest::Approx(expect).epsilon(1e-13));
  CHECK(fb.xi_sums(0, 0) == doctest::Approx(5.0));
}

TEST_CASE("forward-backward equals exhaustive path enumeration") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(3));
    const int n = 1 + static_cast<int>(rng.below(8));
    const int d = 2 + static_cast<int>(rng.below(2));
    const HmmParams p = fixture::random_hmm(rng, k, d);
    const Matrix obs = random_obs(rng, n, d);
    const auto fb = forward_backward(p, obs, EmissionMode::joint);
    const auto ex = enumerate(p, obs, EmissionMode::joint);
    CHECK(max_abs(fb.gamma, ex.gamma) < 1e-10);
    CHECK(max_abs(fb.xi_sums, ex.xi) < 1e-10);
    CHECK(std::abs(fb.loglik - ex.loglik) < 1e-10);
  }
}

TEST_CASE("length-1 segment: no transitions and gamma proportional to pi times emission") {
  Rng rng(5);
  const HmmParams p = fixture::random_hmm(rng, 3, 2);
  const Matrix obs = random_obs(rng, 1, 2);
  const auto fb = forward_backward(p, obs, EmissionMode::joint);
  CHECK(fb.xi_sums.cwiseAbs().maxCoeff() == 0.0);
  Vector w(3);
  for (int k = 0; k < 3; ++k) w(k) = p.pi(k) * std::exp(p.components[k].log_density(row_span(obs, 0)));
  w /= w.sum();
  for (int k = 0; k < 3; ++k) CHECK(std::abs(fb.gamma(0, k) - w(k)) < 1e-12);
}

TEST_CASE("i.i.d. chain reduces to mixture responsibilities") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    HmmParams p = fixture::random_hmm(rng, 3, 3);
    for (int i = 0; i < 3; ++i) p.trans.row(i) = p.pi.transpose();
    const Matrix obs = random_obs(rng, 40, 3);
    const auto fb = forward_backward(p, obs, EmissionMode::joint);
    const GmmParams g{p.pi, p.components};
    CHECK(max_abs(fb.gamma, gmm_responsibilities(g, obs, EmissionMode::joint)) < 1e-10);
  }
}

TEST_CASE("non-finite emissions are rejected") {
  Matrix log_e = Matrix::Zero(3, 2);
  log_e(1, 0) = std::nan("");
  const Vector pi = Vector::Constant(2, 0.5);
  const Matrix trans = Matrix::Constant(2, 2, 0.5);
  CHECK_THROWS_AS(forward_backward_log(pi, trans, log_e), NumericalError);
  CHECK_THROWS_AS(forward_backward_log(pi, trans, Matrix(0, 2)), DataError);
}

TEST_CASE("parameter validation") {
  Rng rng(2);
  HmmParams p = fixture::random_hmm(rng, 2, 2);
  CHECK_NOTHROW(p.validate());
  HmmParams bad = p;
  bad.pi(0) += 1e-9;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = p;
  bad.trans(1, 0) = -0.1;
  bad.trans(1, 1) = 1.1;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = p;
  bad.trans = Matrix::Constant(3, 3, 1.0 / 3.0);
  CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("posterior weights match enumeration over covariate marginals") {
  Rng rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const HmmParams p = fixture::random_hmm(rng, 2, 3);
    const Matrix x = random_obs(rng, 4, 2);
    const auto w = posterior_weights(p, fixture::sequenced(x, {4}));
    const auto ex = enumerate(p, x, EmissionMode::x_only);
    CHECK(max_abs(w.weights, ex.gamma) < 1e-10);
  }
}

TEST_CASE("posterior weight rows sum to one") {
  Rng rng(31);
  const HmmParams p = fixture::random_hmm(rng, 3, 3);
  const Matrix x = random_obs(rng, 100, 2);
  const auto w = posterior_weights(p, fixture::sequenced(x, {10, 1, 39, 50}));
  for (Eigen::Index t = 0; t < w.weights.rows(); ++t) CHECK(std::abs(w.weights.row(t).sum() - 1.0) < 1e-12);
  CHECK(w.voxels.size() == 100);
}

TEST_CASE("single state weights are one and prediction is the conditional mean") {
  Rng rng(37);
  const HmmParams p = fixture::random_hmm(rng, 1, 3);
  const Matrix x = random_obs(rng, 7, 2);
  const auto data = fixture::sequenced(x, {3, 4});
  const auto w = posterior_weights(p, data);
  CHECK(max_abs(w.weights, Matrix::Ones(7, 1)) < 1e-15);
  const auto pred = predict_ct(p, data);
  for (Eigen::Index t = 0; t < 7; ++t)
    CHECK(std::abs(pred.values[t] - oracle::conditional_mean(x.row(t).transpose(), p.components[0])) < 1e-10);
}

TEST_CASE("shared target mean with no cross covariance predicts that constant") {
  Rng rng(41);
  HmmParams p = fixture::random_hmm(rng, 3, 3);
  for (auto& c : p.components) {
    Vector mu = c.mu();
    mu(0) = 250.0;
    Matrix s = c.sigma();
    s.row(0).tail(2).setZero();
    s.col(0).tail(2).setZero();
    c = GaussianComponent(mu, s);
  }
  const Matrix x = random_obs(rng, 30, 2);
  const auto pred = predict_ct(p, fixture::sequenced(x, {30}));
  for (double v : pred.values) CHECK(std::abs(v - 250.0) < 1e-10);
}

TEST_CASE("prediction matches enumeration of paths and conditional Gaussians") {
  Rng rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    const HmmParams p = fixture::random_hmm(rng, 2, 3);
    const Matrix x = random_obs(rng, 3, 2);
    const auto ex = enumerate(p, x, EmissionMode::x_only);
    const auto pred = predict_ct(p, fixture::sequenced(x, {3}));
    for (int t = 0; t < 3; ++t) {
      double expect = 0.0;
      for (int k = 0; k < 2; ++k) expect += ex.gamma(t, k) * oracle::conditional_mean(x.row(t).transpose(), p.components[k]);
      CHECK(std::abs(pred.values[t] - expect) < 1e-10);
    }
  }
}

TEST_CASE("log-likelihood of one point under one state is its density") {
  Rng rng(47);
  const HmmParams p = fixture::random_hmm(rng, 1, 2);
  const Matrix obs = random_obs(rng, 1, 2);
  CHECK(log_likelihood(p, fixture::sequenced(obs, {1})) ==
        doctest::Approx(p.components[0].log_density(row_span(obs, 0))).epsilon(1e-14));
}

TEST_CASE("log-likelihood is additive over segments and matches enumeration") {
  Rng rng(53);
  const HmmParams p = fixture::random_hmm(rng, 3, 2);
  const Matrix a = random_obs(rng, 5, 2);
  const Matrix b = random_obs(rng, 4, 2);
  Matrix ab(9, 2);
  ab << a, b;
  const double la = log_likelihood(p, fixture::sequenced(a, {5}));
  const double lb = log_likelihood(p, fixture::sequenced(b, {4}));
  CHECK(std::abs(log_likelihood(p, fixture::sequenced(ab, {5, 4})) - (la + lb)) < 1e-10);
  CHECK(std::abs(la - enumerate(p, a, EmissionMode::joint).loglik) < 1e-10);
}

TEST_CASE("Baum-Welch log-likelihood never decreases") {
  Rng rng(59);
  for (int trial = 0; trial < 5; ++trial) {
    const HmmParams truth = fixture::random_hmm(rng, 3, 2, 2.0);
    const auto sim = fixture::simulate_hmm(truth, std::vector<std::size_t>(40, 50), rng);
    const HmmParams init = fixture::random_hmm(rng, 3, 2, 2.0);
    const auto fit = baum_welch(init, sim.data, {1e-9, 60, 1});
    for (std::size_t i = 1; i < fit.report.objective.size(); ++i)
      CHECK(fit.report.objective[i] >= fit.report.objective[i - 1] - 1e-8);
    CHECK(std::abs(fit.params.pi.sum() - 1.0) < 1e-12);
    for (Eigen::Index r = 0; r < 3; ++r) CHECK(std::abs(fit.params.trans.row(r).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("one EM iteration from the truth does not lower the log-likelihood") {
  Rng rng(61);
  const HmmParams truth = fixture::random_hmm(rng, 2, 3);
  const auto sim = fixture::simulate_hmm(truth, std::vector<std::size_t>(20, 100), rng);
  const auto fit = baum_welch(truth, sim.data, {0.0, 1, 1});
  REQUIRE(fit.report.objective.size() == 2);
  CHECK(fit.report.objective[1] >= fit.report.objective[0] - 1e-8);
  CHECK(std::abs(fit.report.objective[0] - log_likelihood(truth, sim.data)) < 1e-8);
}

TEST_CASE("single state reaches the Gaussian MLE in one iteration") {
  Rng rng(67);
  const HmmParams p = fixture::random_hmm(rng, 1, 3);
  const auto sim = fixture::simulate_hmm(p, {30, 1, 70}, rng);
  const auto fit = baum_welch(p, sim.data);
  const auto [mu, s] = oracle::weighted_moments(sim.data.observations, std::vector<double>(101, 1.0));
  CHECK((fit.params.components[0].mu() - mu).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((Eigen::MatrixXd(fit.params.components[0].sigma()) - s).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(fit.report.converged);
  CHECK(fit.report.iterations <= 2);
}

TEST_CASE("initial distribution is pooled over segment starts") {
  // Two well separated states; every segment starts in state 1.
  HmmParams p;
  p.pi = Vector(2);
  p.pi << 0.5, 0.5;
  p.trans = Matrix(2, 2);
  p.trans << 0.5, 0.5, 0.5, 0.5;
  Vector m0(2), m1(2);
  m0 << -100.0, -100.0;
  m1 << 100.0, 100.0;
  p.components = {GaussianComponent(m0, Matrix::Identity(2, 2)), GaussianComponent(m1, Matrix::Identity(2, 2))};
  Matrix obs(6, 2);
  obs << 100, 100, -100, -100, 101, 99, 99, 101, -99, -101, -101, -99;
  const auto fit = baum_welch(p, fixture::sequenced(obs, {2, 1, 3}), {1e-12, 1, 1});
  CHECK(fit.params.pi(1) == doctest::Approx(1.0).epsilon(1e-12));
  // Transitions: (1->0) in the first segment, (1->0, 0->0) in the last.
  CHECK(fit.params.trans(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fit.params.trans(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("multi-start with one init equals a single Baum-Welch run") {
  Rng rng(71);
  const HmmParams truth = fixture::random_hmm(rng, 2, 2);
  const auto sim = fixture::simulate_hmm(truth, std::vector<std::size_t>(10, 60), rng);
  const HmmParams init = fixture::random_hmm(rng, 2, 2);
  const auto single = baum_welch(init, sim.data);
  const std::vector<HmmParams> inits{init};
  const auto multi = multi_start_fit(inits, sim.data);
  CHECK(multi.chosen == 0);
  CHECK(multi.report.objective == single.report.objective);
  CHECK(multi.params.trans == single.params.trans);
}

TEST_CASE("multi-start keeps the best final log-likelihood") {
  Rng rng(73);
  const HmmParams truth = fixture::random_hmm(rng, 3, 2, 4.0);
  const auto sim = fixture::simulate_hmm(truth, std::vector<std::size_t>(20, 50), rng);
  const std::vector<HmmParams> inits{fixture::random_hmm(rng, 3, 2), truth, fixture::random_hmm(rng, 3, 2)};
  const auto multi = multi_start_fit(inits, sim.data, {1e-6, 100, 1});
  REQUIRE(multi.start_logliks.size() == 3);
  for (const auto& ll : multi.start_logliks) {
    if (ll) CHECK(multi.report.objective.back() >= *ll);
  }
  CHECK(multi.start_logliks[multi.chosen] == multi.report.objective.back());
  const auto again = multi_start_fit(inits, sim.data, {1e-6, 100, 1});
  CHECK(again.chosen == multi.chosen);
  CHECK(again.report.objective == multi.report.objective);
}

TEST_CASE("multi-start with no inits is an error") {
  CHECK_THROWS_AS(multi_start_fit({}, SequencedData{}), DataError);
}

TEST_CASE("fit does not depend on the worker count") {
  Rng rng(79);
  const HmmParams truth = fixture::random_hmm(rng, 3, 2);
  const auto sim = fixture::simulate_hmm(truth, std::vector<std::size_t>(300, 20), rng);
  const auto one = baum_welch(truth, sim.data, {1e-8, 30, 1});
  const auto four = baum_welch(truth, sim.data, {1e-8, 30, 4});
  REQUIRE(one.report.objective.size() == four.report.objective.size());
  for (std::size_t i = 0; i < one.report.objective.size(); ++i)
    CHECK(std::abs(one.report.objective[i] - four.report.objective[i]) < 1e-8);
}

TEST_CASE("permuting states permutes gamma and keeps loglik and prediction") {
  Rng rng(83);
  const HmmParams p = fixture::random_hmm(rng, 3, 3);
  const std::vector<std::size_t> perm{2, 0, 1};
  const HmmParams q = permute_states(p, perm);
  const Matrix obs = random_obs(rng, 12, 3);
  const auto a = forward_backward(p, obs, EmissionMode::joint);
  const auto b = forward_backward(q, obs, EmissionMode::joint);
  CHECK(std::abs(a.loglik - b.loglik) < 1e-10);
  for (int i = 0; i < 3; ++i) CHECK((a.gamma.col(perm[i]) - b.gamma.col(i)).cwiseAbs().maxCoeff() < 1e-12);
  const Matrix x = obs.rightCols(2);
  const auto pa = predict_ct(p, fixture::sequenced(x, {12}));
  const auto pb = predict_ct(q, fixture::sequenced(x, {12}));
  for (int t = 0; t < 12; ++t) CHECK(std::abs(pa.values[t] - pb.values[t]) < 1e-10);
}

TEST_CASE("sorting by target mean orders states ascending") {
  Rng rng(89);
  const HmmParams p = sort_states_by_mean_y(fixture::random_hmm(rng, 4, 2));
  for (std::size_t i = 1; i < 4; ++i) CHECK(p.components[i - 1].mu_y() <= p.components[i].mu_y());
  CHECK_NOTHROW(p.validate());
}

TEST_CASE("chain from a mixture") {
  Vector w(3);
  w << 0.2, 0.3, 0.5;
  Rng rng(97);
  std::vector<GaussianComponent> comps;
  for (int i = 0; i < 3; ++i) comps.push_back(oracle::random_component(rng, 2));
  const HmmParams p = hmm_from_mixture(w, comps, 0.8);
  CHECK(p.trans(0, 0) == doctest::Approx(0.8));
  CHECK(p.trans(0, 1) == doctest::Approx(0.1));
  CHECK_NOTHROW(p.validate());
  CHECK(hmm_from_mixture(Vector::Ones(1), {comps[0]}).trans(0, 0) == 1.0);
}
