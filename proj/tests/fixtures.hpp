#pragma once

// Random instances and simulators shared by the unit and acceptance tests.

#include <cstddef>
#include <vector>

#include "oracles.hpp"
#include "pseudoct/gmm.hpp"
#include "pseudoct/hilbert.hpp"
#include "pseudoct/hmm.hpp"
#include "pseudoct/phantom.hpp"

namespace fixture {

using namespace pseudoct;

inline HmmParams random_hmm(Rng& rng, int k, int d, double spread = 3.0) {
  HmmParams p;
  p.pi = oracle::random_simplex(rng, k);
  p.trans = oracle::random_stochastic(rng, k);
  for (int i = 0; i < k; ++i) p.components.push_back(oracle::random_component(rng, d, spread));
  return p;
}

inline GmmParams random_gmm(Rng& rng, int k, int d, double spread = 3.0) {
  GmmParams p;
  p.weights = oracle::random_simplex(rng, k);
  for (int i = 0; i < k; ++i) p.components.push_back(oracle::random_component(rng, d, spread));
  return p;
}

inline std::size_t draw(Rng& rng, const Eigen::Ref<const Eigen::RowVectorXd>& p) {
  double r = rng.uniform();
  for (Eigen::Index i = 0; i + 1 < p.size(); ++i) {
    r -= p(i);
    if (r < 0.0) return static_cast<std::size_t>(i);
  }
  return static_cast<std::size_t>(p.size() - 1);
}

struct Simulated {
  SequencedData data;
  std::vector<std::size_t> labels;
};

// Independent chains with the given segment lengths; voxel ids are 0..n-1.
inline Simulated simulate_hmm(const HmmParams& p, const std::vector<std::size_t>& lengths, Rng& rng) {
  std::size_t n = 0;
  for (auto l : lengths) n += l;
  std::vector<GaussianSampler> samplers;
  for (const auto& c : p.components) samplers.emplace_back(c);
  Simulated out;
  out.data.observations.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p.components.front().dim()));
  std::size_t row = 0;
  for (auto len : lengths) {
    std::size_t z = draw(rng, p.pi.transpose());
    for (std::size_t t = 0; t < len; ++t, ++row) {
      if (t > 0) z = draw(rng, p.trans.row(static_cast<Eigen::Index>(z)));
      out.labels.push_back(z);
      out.data.voxels.push_back(static_cast<VoxelId>(row));
      out.data.observations.row(static_cast<Eigen::Index>(row)) = samplers[z](rng).transpose();
    }
    out.data.starts.push_back(row);
  }
  return out;
}

inline Matrix simulate_gmm(const GmmParams& p, std::size_t n, Rng& rng, std::vector<std::size_t>* labels = nullptr) {
  std::vector<GaussianSampler> samplers;
  for (const auto& c : p.components) samplers.emplace_back(c);
  Matrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p.components.front().dim()));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t z = draw(rng, p.weights.transpose());
    if (labels) labels->push_back(z);
    out.row(static_cast<Eigen::Index>(i)) = samplers[z](rng).transpose();
  }
  return out;
}

// One segment per row block; voxel ids are row numbers.
inline SequencedData sequenced(const Matrix& obs, const std::vector<std::size_t>& lengths) {
  SequencedData s;
  s.observations = obs;
  std::size_t row = 0;
  for (auto l : lengths) {
    row += l;
    s.starts.push_back(row);
  }
  for (Eigen::Index i = 0; i < obs.rows(); ++i) s.voxels.push_back(i);
  return s;
}

}  // namespace fixture
