#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "pseudoct/emission.hpp"
#include "pseudoct/hilbert.hpp"
#include "pseudoct/types.hpp"

namespace pseudoct {

// First-order hidden Markov chain with Gaussian emissions.
struct HmmParams {
  Vector pi;     // initial distribution
  Matrix trans;  // trans(i, j) = P(Z_t = j | Z_{t-1} = i)
  std::vector<GaussianComponent> components;

  std::size_t states() const { return components.size(); }

  // Stochasticity (1e-12) and shape checks; throws DataError.
  void validate() const;
};

struct ForwardBackwardResult {
  Matrix gamma;    // n x K posterior state probabilities
  Matrix xi_sums;  // K x K expected transition counts over the segment
  double loglik = 0.0;
};

// Scaled forward-backward on a precomputed n x K table of log emissions.
ForwardBackwardResult forward_backward_log(const Vector& pi, const Matrix& trans,
                                           const Eigen::Ref<const Matrix>& log_emission);

ForwardBackwardResult forward_backward(const HmmParams& params, const Eigen::Ref<const Matrix>& segment,
                                       EmissionMode mode);

struct HmmFitOptions {
  double tol = 1e-6;  // relative log-likelihood improvement
  int max_iter = 500;
  unsigned workers = 1;
};

struct HmmFit {
  HmmParams params;
  FitReport report;
};

// Baum-Welch over independent segments. The initial distribution is pooled
// over segment starts; transitions never cross segment boundaries.
HmmFit baum_welch(const HmmParams& init, const SequencedData& data, const HmmFitOptions& options = {});

// Exact log P(data | params) in joint mode, summed over segments.
double log_likelihood(const HmmParams& params, const SequencedData& data, unsigned workers = 1);

// Posterior state probabilities from the covariate marginals only.
PosteriorWeights posterior_weights(const HmmParams& params, const SequencedData& x_data, unsigned workers = 1);

// sCT_t = sum_k P(Z_t = k | X, params) * E[Y | X_t, Z_t = k].
Prediction predict_ct(const HmmParams& params, const SequencedData& x_data, unsigned workers = 1);

struct MultiStartFit {
  HmmParams params;
  FitReport report;
  std::size_t chosen = 0;
  // Final log-likelihood per start; empty where the start failed.
  std::vector<std::optional<double>> start_logliks;
};

// Fits from every start and keeps the highest final log-likelihood (first
// on ties). Throws NumericalError if every start fails.
MultiStartFit multi_start_fit(std::span<const HmmParams> inits, const SequencedData& data,
                              const HmmFitOptions& options = {});

// Relabels states: new state i is old state perm[i].
HmmParams permute_states(const HmmParams& params, std::span<const std::size_t> perm);
// Relabels states by ascending mu_Y.
HmmParams sort_states_by_mean_y(const HmmParams& params);

// Chain whose initial distribution is `weights` and whose transition rows
// keep the state with probability `stay` and spread the rest evenly.
HmmParams hmm_from_mixture(const Vector& weights, std::vector<GaussianComponent> components, double stay = 0.9);

}  // namespace pseudoct
