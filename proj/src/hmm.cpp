#include "pseudoct/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pseudoct/errors.hpp"
#include "pseudoct/parallel.hpp"

namespace pseudoct {

namespace {

constexpr std::size_t kSegmentsPerChunk = 64;

struct EStep {
  Matrix gamma;
  Vector start_sum;
  Matrix xi;
  double loglik = 0.0;
};

EStep run_estep(const HmmParams& params, const SequencedData& data, EmissionMode mode, unsigned workers) {
  const auto k = static_cast<Eigen::Index>(params.states());
  const Matrix log_e = log_emissions(params.components, data.observations, mode, workers);

  EStep out;
  out.gamma.resize(static_cast<Eigen::Index>(data.size()), k);
  const std::size_t segments = data.segment_count();
  const std::size_t groups = (segments + kSegmentsPerChunk - 1) / kSegmentsPerChunk;
  std::vector<EStep> partial(groups);
  parallel_for(groups, workers, [&](std::size_t g) {
    auto& p = partial[g];
    p.start_sum = Vector::Zero(k);
    p.xi = Matrix::Zero(k, k);
    const std::size_t end = std::min(segments, (g + 1) * kSegmentsPerChunk);
    for (std::size_t s = g * kSegmentsPerChunk; s < end; ++s) {
      const auto begin = static_cast<Eigen::Index>(data.segment_begin(s));
      const auto len = static_cast<Eigen::Index>(data.segment_length(s));
      auto fb = forward_backward_log(params.pi, params.trans, log_e.middleRows(begin, len));
      out.gamma.middleRows(begin, len) = fb.gamma;
      p.start_sum += fb.gamma.row(0).transpose();
      p.xi += fb.xi_sums;
      p.loglik += fb.loglik;
    }
  });
  out.start_sum = Vector::Zero(k);
  out.xi = Matrix::Zero(k, k);
  for (const auto& p : partial) {
    out.start_sum += p.start_sum;
    out.xi += p.xi;
    out.loglik += p.loglik;
  }
  if (!std::isfinite(out.loglik)) throw NumericalError("non-finite HMM log-likelihood");
  return out;
}

HmmParams m_step(const HmmParams& current, const SequencedData& data, const EStep& e, unsigned workers) {
  const std::size_t k = current.states();
  HmmParams next;
  next.pi = e.start_sum / e.start_sum.sum();
  next.trans = current.trans;
  for (std::size_t i = 0; i < k; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const double total = e.xi.row(row).sum();
    // A state never left keeps its old row; the likelihood does not depend on it.
    if (total > 0.0) next.trans.row(row) = e.xi.row(row) / total;
  }
  std::vector<std::optional<GaussianComponent>> comps(k);
  parallel_for(k, workers, [&](std::size_t c) {
    try {
      comps[c].emplace(weighted_mle(data.observations, Vector(e.gamma.col(static_cast<Eigen::Index>(c)))));
    } catch (const DegenerateClassError& err) {
      throw DegenerateClassError(c, err.what());
    }
  });
  next.components.reserve(k);
  for (auto& c : comps) next.components.push_back(std::move(*c));
  return next;
}

}  // namespace

void HmmParams::validate() const {
  const auto k = static_cast<Eigen::Index>(components.size());
  if (k < 1) throw DataError("HMM needs at least one state");
  if (pi.size() != k || trans.rows() != k || trans.cols() != k)
    throw DataError("HMM initial distribution / transition matrix shape does not match " + std::to_string(k) +
                    " states");
  if ((pi.array() < 0.0).any() || std::abs(pi.sum() - 1.0) > 1e-12)
    throw DataError("HMM initial distribution must be non-negative and sum to 1");
  for (Eigen::Index i = 0; i < k; ++i) {
    if ((trans.row(i).array() < 0.0).any() || std::abs(trans.row(i).sum() - 1.0) > 1e-12)
      throw DataError("HMM transition row " + std::to_string(i) + " must be non-negative and sum to 1");
  }
  const auto d = components.front().dim();
  for (const auto& c : components) {
    if (c.dim() != d) throw DataError("HMM components have inconsistent dimensions");
  }
}

ForwardBackwardResult forward_backward_log(const Vector& pi, const Matrix& trans,
                                           const Eigen::Ref<const Matrix>& log_emission) {
  const auto n = log_emission.rows();
  const auto k = log_emission.cols();
  if (n < 1) throw DataError("forward-backward needs a segment of length >= 1");
  if (pi.size() != k || trans.rows() != k || trans.cols() != k)
    throw DataError("emission table width does not match the number of states");
  if (!log_emission.allFinite()) throw NumericalError("non-finite emission log-density");

  Matrix e(n, k);
  Vector shift(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    shift(t) = log_emission.row(t).maxCoeff();
    e.row(t) = (log_emission.row(t).array() - shift(t)).exp();
  }

  Matrix alpha(n, k);
  Vector scale(n);
  ForwardBackwardResult out;
  for (Eigen::Index t = 0; t < n; ++t) {
    Eigen::RowVectorXd a = t == 0 ? Eigen::RowVectorXd(pi.transpose()) : Eigen::RowVectorXd(alpha.row(t - 1) * trans);
    a.array() *= e.row(t).array();
    const double c = a.sum();
    if (!(c > 0.0) || !std::isfinite(c))
      throw NumericalError("forward recursion underflow at position " + std::to_string(t));
    scale(t) = c;
    alpha.row(t) = a / c;
    out.loglik += std::log(c) + shift(t);
  }

  Matrix beta(n, k);
  beta.row(n - 1).setOnes();
  for (Eigen::Index t = n - 2; t >= 0; --t) {
    const Eigen::VectorXd next = (e.row(t + 1).array() * beta.row(t + 1).array()).matrix().transpose();
    beta.row(t) = (trans * next).transpose() / scale(t + 1);
  }

  out.gamma = alpha.cwiseProduct(beta);
  for (Eigen::Index t = 0; t < n; ++t) out.gamma.row(t) /= out.gamma.row(t).sum();

  out.xi_sums = Matrix::Zero(k, k);
  for (Eigen::Index t = 1; t < n; ++t) {
    const Eigen::RowVectorXd right = (e.row(t).array() * beta.row(t).array()).matrix() / scale(t);
    out.xi_sums.array() += (alpha.row(t - 1).transpose() * right).array() * trans.array();
  }
  return out;
}

ForwardBackwardResult forward_backward(const HmmParams& params, const Eigen::Ref<const Matrix>& segment,
                                       EmissionMode mode) {
  return forward_backward_log(params.pi, params.trans, log_emissions(params.components, segment, mode));
}

HmmFit baum_welch(const HmmParams& init, const SequencedData& data, const HmmFitOptions& options) {
  init.validate();
  if (data.segment_count() < 1) throw DataError("Baum-Welch needs at least one segment");
  if (data.size() < init.states()) throw DataError("Baum-Welch needs at least as many voxels as states");

  HmmFit fit{init, {}};
  EStep e = run_estep(fit.params, data, EmissionMode::joint, options.workers);
  fit.report.objective.push_back(e.loglik);
  for (int iter = 1; iter <= options.max_iter; ++iter) {
    HmmParams next = m_step(fit.params, data, e, options.workers);
    EStep next_e = run_estep(next, data, EmissionMode::joint, options.workers);
    const double prev = e.loglik;
    const double rel = (next_e.loglik - prev) / std::max(std::abs(prev), 1e-300);

    double change = (next.pi - fit.params.pi).squaredNorm() + (next.trans - fit.params.trans).squaredNorm();
    for (std::size_t c = 0; c < next.states(); ++c) {
      change += (next.components[c].mu() - fit.params.components[c].mu()).squaredNorm() +
                (next.components[c].sigma() - fit.params.components[c].sigma()).squaredNorm();
    }
    fit.report.param_change.push_back(std::sqrt(change));

    fit.params = std::move(next);
    e = std::move(next_e);
    fit.report.objective.push_back(e.loglik);
    fit.report.iterations = iter;
    fit.report.final_rel_improvement = rel;
    if (rel < options.tol) {
      fit.report.converged = true;
      break;
    }
  }
  return fit;
}

double log_likelihood(const HmmParams& params, const SequencedData& data, unsigned workers) {
  params.validate();
  return run_estep(params, data, EmissionMode::joint, workers).loglik;
}

PosteriorWeights posterior_weights(const HmmParams& params, const SequencedData& x_data, unsigned workers) {
  params.validate();
  EStep e = run_estep(params, x_data, EmissionMode::x_only, workers);
  return {x_data.voxels, std::move(e.gamma)};
}

Prediction predict_ct(const HmmParams& params, const SequencedData& x_data, unsigned workers) {
  const auto w = posterior_weights(params, x_data, workers);
  return {x_data.voxels, combine_predictions(w.weights, params.components, x_data.observations)};
}

MultiStartFit multi_start_fit(std::span<const HmmParams> inits, const SequencedData& data,
                              const HmmFitOptions& options) {
  if (inits.empty()) throw DataError("multi-start fit needs at least one initial parameter set");
  MultiStartFit best;
  std::optional<double> best_ll;
  std::string failures;
  for (std::size_t i = 0; i < inits.size(); ++i) {
    try {
      HmmFit fit = baum_welch(inits[i], data, options);
      const double ll = fit.report.objective.back();
      best.start_logliks.emplace_back(ll);
      if (!best_ll || ll > *best_ll) {
        best_ll = ll;
        best.params = std::move(fit.params);
        best.report = std::move(fit.report);
        best.chosen = i;
      }
    } catch (const NumericalError& err) {
      best.start_logliks.emplace_back(std::nullopt);
      failures += "\n  start " + std::to_string(i) + ": " + err.what();
    }
  }
  if (!best_ll) throw NumericalError("all HMM starts failed:" + failures);
  return best;
}

HmmParams permute_states(const HmmParams& params, std::span<const std::size_t> perm) {
  const auto k = params.states();
  if (perm.size() != k) throw DataError("permutation length does not match number of states");
  HmmParams out;
  out.pi.resize(static_cast<Eigen::Index>(k));
  out.trans.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    out.pi(static_cast<Eigen::Index>(i)) = params.pi(static_cast<Eigen::Index>(perm[i]));
    for (std::size_t j = 0; j < k; ++j) {
      out.trans(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          params.trans(static_cast<Eigen::Index>(perm[i]), static_cast<Eigen::Index>(perm[j]));
    }
    out.components.push_back(params.components[perm[i]]);
  }
  return out;
}

HmmParams sort_states_by_mean_y(const HmmParams& params) {
  std::vector<std::size_t> perm(params.states());
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return params.components[a].mu_y() < params.components[b].mu_y();
  });
  return permute_states(params, perm);
}

HmmParams hmm_from_mixture(const Vector& weights, std::vector<GaussianComponent> components, double stay) {
  const auto k = static_cast<Eigen::Index>(components.size());
  HmmParams out;
  out.pi = weights / weights.sum();
  if (k == 1) {
    out.trans = Matrix::Ones(1, 1);
  } else {
    out.trans = Matrix::Constant(k, k, (1.0 - stay) / static_cast<double>(k - 1));
    out.trans.diagonal().setConstant(stay);
  }
  out.components = std::move(components);
  return out;
}

}  // namespace pseudoct
