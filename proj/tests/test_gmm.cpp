#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "pseudoct/errors.hpp"
#include "pseudoct/gmm.hpp"
#include "pseudoct/hmm.hpp"
#include "pseudoct/hmrf.hpp"

using namespace pseudoct;

namespace {

// Two isotropic blobs in 3D around +-m.
Matrix blobs(Rng& rng, std::size_t per_blob, double m, std::vector<std::size_t>* truth = nullptr) {
  Matrix out(static_cast<Eigen::Index>(2 * per_blob), 3);
  for (std::size_t i = 0; i < 2 * per_blob; ++i) {
    const double centre = i < per_blob ? -m : m;
    for (int j = 0; j < 3; ++j) out(static_cast<Eigen::Index>(i), j) = centre + rng.normal();
    if (truth) truth->push_back(i < per_blob ? 0 : 1);
  }
  return out;
}

bool same_partition(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < a.size(); ++i) pairs.emplace(a[i], b[i]);
  std::set<std::size_t> la(a.begin(), a.end()), lb(b.begin(), b.end());
  return pairs.size() == la.size() && la.size() == lb.size();
}

Matrix naive_responsibilities(const GmmParams& p, const Matrix& obs) {
  const auto k = static_cast<Eigen::Index>(p.states());
  Matrix r(obs.rows(), k);
  for (Eigen::Index t = 0; t < obs.rows(); ++t) {
    double total = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) {
      const auto& comp = p.components[static_cast<std::size_t>(c)];
      r(t, c) = p.weights(c) * std::exp(oracle::log_normal(obs.row(t).transpose(), comp.mu(), comp.sigma()));
      total += r(t, c);
    }
    r.row(t) /= total;
  }
  return r;
}

}  // namespace

TEST_CASE("k-means on two separated blobs finds their centres") {
  Rng rng(1);
  const Matrix data = blobs(rng, 500, 20.0);
  const GmmParams p = sort_states_by_mean_y(kmeans_init(data, 2, {7, 100}));
  const auto [lo, _l] = oracle::weighted_moments(data.topRows(500), std::vector<double>(500, 1.0));
  const auto [hi, _h] = oracle::weighted_moments(data.bottomRows(500), std::vector<double>(500, 1.0));
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(p.components[0].mu()(j) - lo(j)) < 0.01 * std::abs(lo(j)));
    CHECK(std::abs(p.components[1].mu()(j) - hi(j)) < 0.01 * std::abs(hi(j)));
  }
  CHECK(p.weights(0) == doctest::Approx(0.5));
}

TEST_CASE("k-means with one cluster gives the global moments") {
  Rng rng(2);
  const Matrix data = blobs(rng, 100, 3.0);
  const GmmParams p = kmeans_init(data, 1);
  const auto [mu, s] = oracle::weighted_moments(data, std::vector<double>(200, 1.0));
  CHECK((p.components[0].mu() - mu).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((Eigen::MatrixXd(p.components[0].sigma()) - s).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(p.weights(0) == 1.0);
}

TEST_CASE("k-means is deterministic under a fixed seed") {
  Rng rng(3);
  const GmmParams g = fixture::random_gmm(rng, 4, 3);
  const Matrix data = fixture::simulate_gmm(g, 2000, rng);
  CHECK(kmeans_labels(data, 4, {11, 100}) == kmeans_labels(data, 4, {11, 100}));
}

TEST_CASE("k-means needs enough distinct points") {
  Matrix data(5, 2);
  data << 1, 1, 1, 1, 2, 2, 2, 2, 1, 1;
  CHECK(distinct_rows(data) == 2);
  CHECK_THROWS_AS(kmeans_init(data, 3), DataError);
  CHECK_THROWS_AS(hierarchical_init(data, 3), DataError);
  CHECK(kmeans_labels(data, 2).size() == 5);
}

TEST_CASE("Ward clustering splits two separated blobs correctly") {
  Rng rng(4);
  std::vector<std::size_t> truth;
  const Matrix data = blobs(rng, 300, 10.0, &truth);
  const auto h = hierarchical_labels(data, 2);
  REQUIRE(h.rows.size() == 600);
  CHECK(same_partition(h.labels, truth));
}

TEST_CASE("Ward clustering with K = n keeps singletons") {
  Rng rng(5);
  Matrix data(12, 2);
  for (int i = 0; i < 12; ++i) data.row(i) << rng.normal(), rng.normal();
  const auto h = hierarchical_labels(data, 12);
  std::set<std::size_t> labels(h.labels.begin(), h.labels.end());
  CHECK(labels.size() == 12);
}

TEST_CASE("Ward subsample honours its cap") {
  Rng rng(6);
  const Matrix data = blobs(rng, 1500, 10.0);
  const auto h = hierarchical_labels(data, 2, {1000, 9});
  CHECK(h.rows.size() == 1000);
  CHECK(std::is_sorted(h.rows.begin(), h.rows.end()));
  CHECK(std::set<std::size_t>(h.rows.begin(), h.rows.end()).size() == 1000);
  CHECK(hierarchical_labels(data, 2, {1000, 9}).labels == h.labels);
  CHECK(HierarchicalOptions{}.subsample_cap == 2000);
}

TEST_CASE("Ward merges agree with brute-force minimum Ward cost") {
  // With distinct pairwise costs the nearest-neighbour chain reproduces the
  // greedy algorithm exactly; check the resulting partitions agree.
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix data(15, 2);
    for (int i = 0; i < 15; ++i) data.row(i) << 3.0 * rng.normal(), 3.0 * rng.normal();
    std::vector<std::vector<int>> clusters;
    for (int i = 0; i < 15; ++i) clusters.push_back({i});
    auto centroid = [&](const std::vector<int>& c) {
      Eigen::RowVector2d m = Eigen::RowVector2d::Zero();
      for (int i : c) m += data.row(i);
      return Eigen::RowVector2d(m / static_cast<double>(c.size()));
    };
    while (clusters.size() > 3) {
      double best = INFINITY;
      std::size_t ba = 0, bb = 0;
      for (std::size_t a = 0; a < clusters.size(); ++a)
        for (std::size_t b = a + 1; b < clusters.size(); ++b) {
          const double na = static_cast<double>(clusters[a].size()), nb = static_cast<double>(clusters[b].size());
          const double cost = na * nb / (na + nb) * (centroid(clusters[a]) - centroid(clusters[b])).squaredNorm();
          if (cost < best) best = cost, ba = a, bb = b;
        }
      clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
      clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
    }
    std::vector<std::size_t> expect(15);
    for (std::size_t c = 0; c < clusters.size(); ++c)
      for (int i : clusters[c]) expect[static_cast<std::size_t>(i)] = c;
    CHECK(same_partition(hierarchical_labels(data, 3).labels, expect));
  }
}

TEST_CASE("responsibilities follow Bayes rule") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const GmmParams p = fixture::random_gmm(rng, 3, 3);
    const Matrix data = fixture::simulate_gmm(p, 50, rng);
    CHECK((gmm_responsibilities(p, data, EmissionMode::joint) - naive_responsibilities(p, data)).cwiseAbs().maxCoeff() <
          1e-12);
  }
}

TEST_CASE("EM log-likelihood never decreases and weights stay normalized") {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const GmmParams truth = fixture::random_gmm(rng, 3, 2, 2.0);
    const Matrix data = fixture::simulate_gmm(truth, 2000, rng);
    const auto fit = fit_gmm(fixture::random_gmm(rng, 3, 2, 2.0), data, {1e-10, 80, 1});
    for (std::size_t i = 1; i < fit.report.objective.size(); ++i)
      CHECK(fit.report.objective[i] >= fit.report.objective[i - 1] - 1e-8);
    CHECK(std::abs(fit.params.weights.sum() - 1.0) < 1e-12);
    CHECK(std::abs(fit.report.objective.back() - gmm_log_likelihood(fit.params, data)) < 1e-8);
  }
}

TEST_CASE("single class converges to the sample moments in one iteration") {
  Rng rng(10);
  const GmmParams g = fixture::random_gmm(rng, 1, 3);
  const Matrix data = fixture::simulate_gmm(g, 300, rng);
  const auto fit = fit_gmm(g, data);
  const auto [mu, s] = oracle::weighted_moments(data, std::vector<double>(300, 1.0));
  CHECK((fit.params.components[0].mu() - mu).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((Eigen::MatrixXd(fit.params.components[0].sigma()) - s).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(fit.report.converged);
  CHECK(fit.report.iterations <= 2);
}

TEST_CASE("simulated mixture is recovered within 5 percent") {
  GmmParams truth;
  truth.weights = Vector(2);
  truth.weights << 0.35, 0.65;
  Vector m0(2), m1(2);
  m0 << 100.0, 40.0;
  m1 << 900.0, 15.0;
  Matrix s0(2, 2), s1(2, 2);
  s0 << 400.0, 30.0, 30.0, 16.0;
  s1 << 2500.0, -50.0, -50.0, 9.0;
  truth.components = {GaussianComponent(m0, s0), GaussianComponent(m1, s1)};
  Rng rng(11);
  const Matrix data = fixture::simulate_gmm(truth, 50000, rng);
  const auto fit = fit_gmm(kmeans_init(data, 2), data);
  const GmmParams got = sort_states_by_mean_y(fit.params);
  for (int k = 0; k < 2; ++k) {
    CHECK(std::abs(got.weights(k) / truth.weights(k) - 1.0) < 0.05);
    for (int j = 0; j < 2; ++j) {
      CHECK(std::abs(got.components[k].mu()(j) / truth.components[k].mu()(j) - 1.0) < 0.05);
      CHECK(std::abs(got.components[k].sigma()(j, j) / truth.components[k].sigma()(j, j) - 1.0) < 0.05);
    }
  }
}

TEST_CASE("single class predicts the conditional mean") {
  Rng rng(12);
  const GmmParams g = fixture::random_gmm(rng, 1, 3);
  Matrix x(10, 2);
  std::vector<VoxelId> ids;
  for (int i = 0; i < 10; ++i) {
    x.row(i) << rng.normal(), rng.normal();
    ids.push_back(i);
  }
  const auto pred = predict_ct_gmm(g, ids, x);
  for (int t = 0; t < 10; ++t)
    CHECK(std::abs(pred.values[t] - oracle::conditional_mean(x.row(t).transpose(), g.components[0])) < 1e-12);
}

TEST_CASE("mixture, i.i.d. chain and beta-zero field predict the same values") {
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const GmmParams g = fixture::random_gmm(rng, 2, 3);
    // 2 x 2 x 2 full lattice so the field can be enumerated.
    const Lattice lattice = Lattice::full({2, 2, 2});
    Matrix x(8, 2);
    for (int i = 0; i < 8; ++i) x.row(i) << 2.0 * rng.normal(), 2.0 * rng.normal();
    const auto gp = predict_ct_gmm(g, lattice.voxels(), x);

    HmmParams h{g.weights, Matrix(2, 2), g.components};
    for (int i = 0; i < 2; ++i) h.trans.row(i) = g.weights.transpose();
    const auto hp = predict_ct(h, fixture::sequenced(x, {3, 5}));

    const MrfParams m = mrf_from_mixture(g.weights, g.components, 0.0);
    const auto mp = predict_ct_mrf_exact(m, x, lattice);
    for (int t = 0; t < 8; ++t) {
      CHECK(std::abs(gp.values[t] - hp.values[t]) < 1e-10);
      CHECK(std::abs(gp.values[t] - mp.values[t]) < 1e-10);
    }
  }
}

TEST_CASE("fitting the mixture equals Baum-Welch with pinned i.i.d. rows for one step") {
  Rng rng(14);
  const GmmParams g = fixture::random_gmm(rng, 2, 2);
  const Matrix data = fixture::simulate_gmm(g, 500, rng);
  const auto one = fit_gmm(g, data, {0.0, 1, 1});
  HmmParams h{g.weights, Matrix(2, 2), g.components};
  for (int i = 0; i < 2; ++i) h.trans.row(i) = g.weights.transpose();
  // Every point its own segment: no transitions, pi pooled over all points.
  const auto bw = baum_welch(h, fixture::sequenced(data, std::vector<std::size_t>(500, 1)), {0.0, 1, 1});
  CHECK((one.params.weights - bw.params.pi).cwiseAbs().maxCoeff() < 1e-12);
  for (int k = 0; k < 2; ++k)
    CHECK((one.params.components[k].mu() - bw.params.components[k].mu()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(std::abs(one.report.objective[0] - bw.report.objective[0]) < 1e-8);
}

TEST_CASE("worker count does not change the fit") {
  Rng rng(15);
  const GmmParams g = fixture::random_gmm(rng, 3, 3);
  const Matrix data = fixture::simulate_gmm(g, 5000, rng);
  const auto a = fit_gmm(g, data, {1e-8, 20, 1});
  const auto b = fit_gmm(g, data, {1e-8, 20, 3});
  REQUIRE(a.report.objective.size() == b.report.objective.size());
  for (std::size_t i = 0; i < a.report.objective.size(); ++i)
    CHECK(std::abs(a.report.objective[i] - b.report.objective[i]) < 1e-8);
}

TEST_CASE("a class that loses its mass is reported as degenerate") {
  Matrix data(50, 2);
  Rng rng(16);
  for (int i = 0; i < 50; ++i) data.row(i) << rng.normal(), rng.normal();
  Vector far(2);
  far << 1e6, 1e6;
  GmmParams p{Vector::Constant(2, 0.5), {GaussianComponent(Vector::Zero(2), Matrix::Identity(2, 2)),
                                         GaussianComponent(far, Matrix::Identity(2, 2))}};
  try {
    fit_gmm(p, data);
    FAIL("expected a degenerate class");
  } catch (const DegenerateClassError& err) {
    CHECK(err.class_index() == 1);
  }
}
