#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pseudoct/emission.hpp"
#include "pseudoct/types.hpp"

namespace pseudoct {

struct GmmParams {
  Vector weights;
  std::vector<GaussianComponent> components;

  std::size_t states() const { return components.size(); }
  void validate() const;
};

// Moments of each cluster of a hard labelling; weights are cluster shares.
GmmParams params_from_labels(const Matrix& data, std::span<const std::size_t> labels, std::size_t k);

struct KMeansOptions {
  std::uint64_t seed = 1;
  int max_iter = 100;
};

// Lloyd's algorithm on the joint rows with k-means++ seeding. Empty clusters
// are reseeded from the point farthest from its centre.
std::vector<std::size_t> kmeans_labels(const Matrix& data, std::size_t k, const KMeansOptions& options = {});
GmmParams kmeans_init(const Matrix& data, std::size_t k, const KMeansOptions& options = {});

struct HierarchicalOptions {
  std::size_t subsample_cap = 2000;
  std::uint64_t seed = 1;
};

struct HierarchicalResult {
  std::vector<std::size_t> rows;    // subsampled row indices, ascending
  std::vector<std::size_t> labels;  // cluster per subsampled row, 0..k-1
};

// Ward-linkage agglomerative clustering (nearest-neighbour chain) on a
// uniform subsample of at most subsample_cap rows, merged down to k clusters.
HierarchicalResult hierarchical_labels(const Matrix& data, std::size_t k, const HierarchicalOptions& options = {});
GmmParams hierarchical_init(const Matrix& data, std::size_t k, const HierarchicalOptions& options = {});

struct GmmFitOptions {
  double tol = 1e-6;
  int max_iter = 500;
  unsigned workers = 1;
};

struct GmmFit {
  GmmParams params;
  FitReport report;
};

// n x K responsibilities w_k N(obs | k) / sum_j w_j N(obs | j).
Matrix gmm_responsibilities(const GmmParams& params, const Eigen::Ref<const Matrix>& observations,
                            EmissionMode mode, unsigned workers = 1);
double gmm_log_likelihood(const GmmParams& params, const Eigen::Ref<const Matrix>& observations,
                          unsigned workers = 1);

GmmFit fit_gmm(const GmmParams& init, const Matrix& data, const GmmFitOptions& options = {});

Prediction predict_ct_gmm(const GmmParams& params, std::span<const VoxelId> voxels, const Matrix& x_data,
                          unsigned workers = 1);

GmmParams sort_states_by_mean_y(const GmmParams& params);

// Number of distinct rows.
std::size_t distinct_rows(const Matrix& data);

}  // namespace pseudoct
