#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pseudoct/gmm.hpp"
#include "pseudoct/hilbert.hpp"
#include "pseudoct/hmm.hpp"
#include "pseudoct/hmrf.hpp"
#include "pseudoct/volume_io.hpp"

namespace pseudoct {

enum class Family { gmm, hmm, hmrf };

std::string to_string(Family family);
Family parse_family(const std::string& name);

// A fitted model of any family together with the channels it was trained on.
struct Model {
  Family family = Family::gmm;
  ChannelSelection channels;
  std::variant<GmmParams, HmmParams, MrfParams> params;
  FitReport report;
  std::string chosen_start;
  std::optional<int> hilbert_order;

  std::size_t states() const;
  std::span<const GaussianComponent> components() const;
};

// Everything a fit or prediction needs apart from the data.
struct FitConfig {
  Family family = Family::hmm;
  std::size_t k = 5;
  std::optional<double> tol;   // family default when unset
  std::optional<int> max_iter;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  int kmeans_starts = 3;
  bool hierarchical_start = true;
  std::size_t hierarchical_cap = 2000;
  GibbsOptions fit_gibbs{100, 200};
  GibbsOptions predict_gibbs{500, 1000};
  double beta_init = 0.0;
  bool freeze_beta = false;
  SequenceOptions sequence;
  ChannelSelection channels;

  double resolved_tol() const;
  int resolved_max_iter() const;
};

// Called once per training head with its position in `heads` and the number
// of its voxels that entered the fit.
using TrainingAudit = std::function<void(std::size_t head, std::size_t voxels)>;

// Fits `config.family` on the pooled heads. Starts:
//   gmm:  k-means (kmeans_starts seeds) and Ward clustering on the pooled rows;
//   hmm:  the same mixtures wrapped as chains, plus, with several heads, one
//         single-head Baum-Welch fit per head; best final log-likelihood wins;
//   hmrf: best GMM fit as the initial field with beta = beta_init.
// All seeds depend on config.seed and the start's position only.
Model fit_model(std::span<const Volume* const> heads, const FitConfig& config, const TrainingAudit& audit = {});
Model fit_model(const Volume& head, const FitConfig& config);

// Predicted target over the volume's masked voxels, in raster order. Needs
// only the model's covariate channels.
Prediction predict_model(const Model& model, const Volume& volume, const FitConfig& config);

// Target values at the prediction's voxels.
std::vector<double> truth_at(const Volume& volume, const std::string& target, std::span<const VoxelId> voxels);

}  // namespace pseudoct
