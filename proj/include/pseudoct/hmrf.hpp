#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pseudoct/emission.hpp"
#include "pseudoct/types.hpp"
#include "pseudoct/volume_io.hpp"

namespace pseudoct {

// Masked voxels of a 3D grid with first-order (6-neighbour) adjacency.
// Sites are indexed 0..size()-1 in raster order of the mask.
class Lattice {
 public:
  Lattice() = default;

  static Lattice from_mask(const std::array<std::int64_t, 3>& dims, const std::vector<bool>& mask);
  static Lattice from_volume(const Volume& volume);
  static Lattice full(const std::array<std::int64_t, 3>& dims);
  // Several lattices side by side with no adjacency between them.
  static Lattice disjoint_union(std::span<const Lattice> parts);

  std::size_t size() const { return voxels_.size(); }
  const std::vector<VoxelId>& voxels() const { return voxels_; }
  std::span<const std::size_t> neighbours(std::size_t site) const {
    return std::span<const std::size_t>(adjacency_).subspan(offsets_[site], offsets_[site + 1] - offsets_[site]);
  }
  // Each unordered neighbour pair once, first < second.
  const std::vector<std::pair<std::size_t, std::size_t>>& pairs() const { return pairs_; }

 private:
  void build_pairs();

  std::vector<VoxelId> voxels_;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::size_t> adjacency_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
};

// Gibbs-field prior p(z) = exp(-H(z)) / W with
//   H(z) = sum_u alpha[z_u] + sum_{u~v} beta[z_u] [z_u == z_v].
// Probability falls with energy, so same-class clustering needs beta < 0.
// alpha[0] is pinned to 0 for identifiability.
struct MrfParams {
  Vector alpha;
  Vector beta;
  std::vector<GaussianComponent> components;

  std::size_t states() const { return components.size(); }
  void validate() const;
};

using Labels = std::vector<std::uint16_t>;

double energy(std::span<const std::uint16_t> labels, const Lattice& lattice, const Vector& alpha, const Vector& beta);

// Exact marginals P(Z_u = k | obs) by enumerating all K^n configurations.
// Limited to K^n <= 1e6.
inline constexpr double kMaxEnumeration = 1e6;
Matrix exact_posterior(const Vector& alpha, const Vector& beta, const Matrix& log_emission, const Lattice& lattice);
// log sum_z exp(-H(z)); only for enumerable lattices.
double exact_log_partition(const Vector& alpha, const Vector& beta, const Lattice& lattice, std::size_t states);

struct GibbsOptions {
  int burn_in = 100;
  int samples = 200;
  std::uint64_t seed = 1;
  int batches = 50;             // for batch-means standard errors
  bool track_energy = false;    // record H after every sweep
};

struct GibbsResult {
  Matrix marginals;   // n x K empirical label frequencies after burn-in
  Matrix std_errors;  // batch-means standard error of each frequency
  Labels final_labels;
  std::vector<double> energy_trace;   // incremental H after each sweep
  std::vector<double> energy_check;   // full recomputation after each sweep
};

// Systematic raster-scan single-site Gibbs sampler. Site conditionals are
// softmax_k(-alpha_k - beta_k * #{v ~ u : z_v = k} + log_emission(u, k)).
// `start` warm-starts the chain; otherwise each site starts at its
// independent-site mode.
GibbsResult gibbs_posterior(const Vector& alpha, const Vector& beta, const Matrix& log_emission,
                            const Lattice& lattice, const GibbsOptions& options,
                            const std::optional<Labels>& start = std::nullopt);

// Single-site conditional distribution used by the sampler.
Vector site_conditional(const Vector& alpha, const Vector& beta, const Matrix& log_emission, const Lattice& lattice,
                        std::span<const std::uint16_t> labels, std::size_t site);

// Pseudo-log-likelihood with expected neighbour counts under `weights`:
//   sum_u sum_k w_uk log softmax_k(-alpha_k - beta_k c_uk),  c_uk = sum_{v~u} w_vk.
// Derivatives are taken w.r.t. theta = (alpha_2..alpha_K, beta_1..beta_K).
struct PllResult {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
};
PllResult pseudo_log_likelihood(const Vector& alpha, const Vector& beta, const Matrix& weights, const Lattice& lattice);

Vector pack_potentials(const Vector& alpha, const Vector& beta);
void unpack_potentials(const Vector& theta, Vector& alpha, Vector& beta);

struct MrfFitOptions {
  double tol = 1e-3;  // on the larger relative change of the potential and Gaussian blocks
  int max_iter = 50;
  GibbsOptions gibbs{};
  // Keep beta at its initial value and only update alpha and the Gaussians.
  bool freeze_beta = false;
  unsigned workers = 1;
};

struct MrfFit {
  MrfParams params;
  FitReport report;        // objective = PLL after each M-step
  Matrix weights;          // final E-step marginals
  std::vector<MrfParams> trace;  // parameters after every iteration
};

// EM-gradient fit: Gibbs E-step (exact when beta is frozen at zero), Gaussian
// M-step by weighted_mle, and one damped Newton step on the PLL for the
// potentials. With beta frozen at zero the alpha update is the closed-form
// PLL maximizer, which makes the fit coincide with mixture EM.
MrfFit em_gradient_fit(const MrfParams& init, const Matrix& observations, const Lattice& lattice,
                       const MrfFitOptions& options = {});

// Prediction weights from covariate marginals, sampled by Gibbs.
PosteriorWeights mrf_posterior_weights(const MrfParams& params, const Matrix& x_observations,
                                       const Lattice& lattice, const GibbsOptions& options);
Prediction predict_ct_mrf(const MrfParams& params, const Matrix& x_observations, const Lattice& lattice,
                          const GibbsOptions& options);
// Same predictor with enumerated weights; tiny lattices only.
Prediction predict_ct_mrf_exact(const MrfParams& params, const Matrix& x_observations, const Lattice& lattice);

// alpha_k = log w_1 - log w_k so that softmax(-alpha) = w.
MrfParams mrf_from_mixture(const Vector& weights, std::vector<GaussianComponent> components, double beta0 = 0.0);

MrfParams sort_states_by_mean_y(const MrfParams& params);

}  // namespace pseudoct
