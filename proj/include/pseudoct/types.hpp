#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace pseudoct {

// Observation tables are stored one voxel per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

using VoxelId = std::int64_t;

// Which latent distribution the emission densities are evaluated under.
// `joint` scores (Y, X) rows and is used for training; `x_only` scores the
// MRI marginal and is used to form prediction weights.
enum class EmissionMode { joint, x_only };

// Per-voxel class membership probabilities, row i aligned with voxels[i].
struct PosteriorWeights {
  std::vector<VoxelId> voxels;
  Matrix weights;
};

// Per-voxel predicted target values, values[i] belongs to voxels[i].
struct Prediction {
  std::vector<VoxelId> voxels;
  std::vector<double> values;
};

// Convergence trace shared by every fitting routine. For the chain and
// mixture models `objective` holds the exact log-likelihood per iteration;
// the random-field fit stores the pseudo-log-likelihood there instead.
struct FitReport {
  std::vector<double> objective;
  std::vector<double> param_change;
  int iterations = 0;
  bool converged = false;
  double final_rel_improvement = 0.0;
};

}  // namespace pseudoct
