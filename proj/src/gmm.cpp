#include "pseudoct/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>

#include "pseudoct/errors.hpp"
#include "pseudoct/parallel.hpp"
#include "pseudoct/random.hpp"

namespace pseudoct {

namespace {

void require_distinct(const Matrix& data, std::size_t k) {
  if (k < 1) throw DataError("number of classes must be >= 1");
  if (static_cast<std::size_t>(data.rows()) < k || distinct_rows(data) < k)
    throw DataError("need at least " + std::to_string(k) + " distinct observations, have " +
                    std::to_string(distinct_rows(data)));
}

double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

}  // namespace

void GmmParams::validate() const {
  const auto k = static_cast<Eigen::Index>(components.size());
  if (k < 1) throw DataError("GMM needs at least one component");
  if (weights.size() != k) throw DataError("GMM weights length does not match components");
  if ((weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-12)
    throw DataError("GMM weights must be non-negative and sum to 1");
}

std::size_t distinct_rows(const Matrix& data) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index i = 0; i < data.rows(); ++i) rows[static_cast<std::size_t>(i)].assign(data.row(i).begin(), data.row(i).end());
  std::sort(rows.begin(), rows.end());
  return static_cast<std::size_t>(std::unique(rows.begin(), rows.end()) - rows.begin());
}

GmmParams params_from_labels(const Matrix& data, std::span<const std::size_t> labels, std::size_t k) {
  GmmParams out;
  out.weights = Vector::Zero(static_cast<Eigen::Index>(k));
  for (std::size_t c = 0; c < k; ++c) {
    Vector w = Vector::Zero(data.rows());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) w(static_cast<Eigen::Index>(i)) = 1.0;
    }
    out.weights(static_cast<Eigen::Index>(c)) = w.sum();
    try {
      out.components.push_back(weighted_mle(data, w));
    } catch (const DegenerateClassError& err) {
      throw DegenerateClassError(c, err.what());
    }
  }
  out.weights /= out.weights.sum();
  return out;
}

std::vector<std::size_t> kmeans_labels(const Matrix& data, std::size_t k, const KMeansOptions& options) {
  require_distinct(data, k);
  const auto n = data.rows();
  const auto d = data.cols();
  Rng rng(derive_seed(options.seed, streams::kmeans));

  // k-means++ seeding.
  Matrix centres(static_cast<Eigen::Index>(k), d);
  centres.row(0) = data.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  Vector nearest(n);
  for (Eigen::Index i = 0; i < n; ++i) nearest(i) = squared_distance(data, i, centres, 0);
  for (std::size_t c = 1; c < k; ++c) {
    const double total = nearest.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        target -= nearest(pick);
        if (target < 0.0 && nearest(pick) > 0.0) break;
      }
      if (nearest(pick) == 0.0) nearest.maxCoeff(&pick);
    } else {
      nearest.maxCoeff(&pick);
    }
    centres.row(static_cast<Eigen::Index>(c)) = data.row(pick);
    for (Eigen::Index i = 0; i < n; ++i)
      nearest(i) = std::min(nearest(i), squared_distance(data, i, centres, static_cast<Eigen::Index>(c)));
  }

  std::vector<std::size_t> labels(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < options.max_iter; ++iter) {
    bool changed = iter == 0;
    Vector dist(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = squared_distance(data, i, centres, static_cast<Eigen::Index>(c));
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      if (labels[static_cast<std::size_t>(i)] != best) changed = true;
      labels[static_cast<std::size_t>(i)] = best;
      dist(i) = best_d;
    }
    if (!changed) break;

    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), d);
    std::vector<std::size_t> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])) += data.row(i);
      ++counts[labels[static_cast<std::size_t>(i)]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      const auto row = static_cast<Eigen::Index>(c);
      if (counts[c] > 0) {
        centres.row(row) = sums.row(row) / static_cast<double>(counts[c]);
        continue;
      }
      Eigen::Index far = 0;
      dist.maxCoeff(&far);
      centres.row(row) = data.row(far);
      labels[static_cast<std::size_t>(far)] = c;
      dist(far) = 0.0;
    }
  }
  return labels;
}

GmmParams kmeans_init(const Matrix& data, std::size_t k, const KMeansOptions& options) {
  const auto labels = kmeans_labels(data, k, options);
  return params_from_labels(data, labels, k);
}

HierarchicalResult hierarchical_labels(const Matrix& data, std::size_t k, const HierarchicalOptions& options) {
  require_distinct(data, k);
  const auto n_all = static_cast<std::size_t>(data.rows());
  HierarchicalResult out;
  out.rows.resize(n_all);
  std::iota(out.rows.begin(), out.rows.end(), 0);
  if (n_all > options.subsample_cap) {
    // Partial Fisher-Yates for a uniform subsample without replacement.
    Rng rng(derive_seed(options.seed, streams::hierarchical));
    for (std::size_t i = 0; i < options.subsample_cap; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(n_all - i));
      std::swap(out.rows[i], out.rows[j]);
    }
    out.rows.resize(options.subsample_cap);
    std::sort(out.rows.begin(), out.rows.end());
  }
  const std::size_t n = out.rows.size();
  if (n < k) throw DataError("subsample smaller than the number of classes");

  // Ward distances via Lance-Williams on squared Euclidean distances.
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dd = (data.row(static_cast<Eigen::Index>(out.rows[i])) -
                         data.row(static_cast<Eigen::Index>(out.rows[j])))
                            .squaredNorm();
      dist[i * n + j] = dist[j * n + i] = dd;
    }
  }
  std::vector<double> size(n, 1.0);
  std::vector<bool> active(n, true);
  struct Merge {
    double height;
    std::size_t a, b;
    std::size_t order;
  };
  std::vector<Merge> merges;
  merges.reserve(n);

  std::vector<std::size_t> chain;
  std::size_t remaining = n;
  while (remaining > 1) {
    if (chain.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        if (active[i]) {
          chain.push_back(i);
          break;
        }
      }
    }
    const std::size_t top = chain.back();
    const std::size_t prev = chain.size() >= 2 ? chain[chain.size() - 2] : n;
    std::size_t nn = n;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (!active[j] || j == top) continue;
      const double dd = dist[top * n + j];
      // Prefer the previous chain element on ties so the chain terminates.
      if (dd < best || (dd == best && j == prev)) {
        best = dd;
        nn = j;
      }
    }
    if (nn == prev) {
      chain.pop_back();
      chain.pop_back();
      const std::size_t a = std::min(top, prev), b = std::max(top, prev);
      merges.push_back({best, a, b, merges.size()});
      for (std::size_t j = 0; j < n; ++j) {
        if (!active[j] || j == a || j == b) continue;
        const double sa = size[a], sb = size[b], sj = size[j];
        const double updated =
            ((sa + sj) * dist[a * n + j] + (sb + sj) * dist[b * n + j] - sj * dist[a * n + b]) / (sa + sb + sj);
        dist[a * n + j] = dist[j * n + a] = updated;
      }
      size[a] += size[b];
      active[b] = false;
      --remaining;
    } else {
      chain.push_back(nn);
    }
  }

  // Apply the n-k lowest merges to recover the k-cluster cut.
  std::stable_sort(merges.begin(), merges.end(), [](const Merge& x, const Merge& y) { return x.height < y.height; });
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t m = 0; m + k < n; ++m) parent[find(merges[m].b)] = find(merges[m].a);

  std::vector<std::size_t> root_label(n, n);
  out.labels.resize(n);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = find(i);
    if (root_label[r] == n) root_label[r] = next++;
    out.labels[i] = root_label[r];
  }
  return out;
}

GmmParams hierarchical_init(const Matrix& data, std::size_t k, const HierarchicalOptions& options) {
  const auto h = hierarchical_labels(data, k, options);
  Matrix sub(static_cast<Eigen::Index>(h.rows.size()), data.cols());
  for (std::size_t i = 0; i < h.rows.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(h.rows[i]));
  return params_from_labels(sub, h.labels, k);
}

namespace {

Matrix weighted_log_emissions(const GmmParams& params, const Eigen::Ref<const Matrix>& observations, EmissionMode mode,
                              unsigned workers) {
  Matrix log_e = log_emissions(params.components, observations, mode, workers);
  for (Eigen::Index k = 0; k < log_e.cols(); ++k) log_e.col(k).array() += std::log(params.weights(k));
  return log_e;
}

}  // namespace

Matrix gmm_responsibilities(const GmmParams& params, const Eigen::Ref<const Matrix>& observations, EmissionMode mode,
                            unsigned workers) {
  Matrix log_e = weighted_log_emissions(params, observations, mode, workers);
  const Vector norm = log_sum_exp_rows(log_e);
  for (Eigen::Index i = 0; i < log_e.rows(); ++i) log_e.row(i) = (log_e.row(i).array() - norm(i)).exp();
  return log_e;
}

double gmm_log_likelihood(const GmmParams& params, const Eigen::Ref<const Matrix>& observations, unsigned workers) {
  const Matrix log_e = weighted_log_emissions(params, observations, EmissionMode::joint, workers);
  const Vector rows = log_sum_exp_rows(log_e);
  // Sum in fixed chunks so the result does not depend on the worker count.
  double total = 0.0;
  for (Eigen::Index begin = 0; begin < rows.size(); begin += static_cast<Eigen::Index>(kChunkSize)) {
    const auto len = std::min<Eigen::Index>(static_cast<Eigen::Index>(kChunkSize), rows.size() - begin);
    total += rows.segment(begin, len).sum();
  }
  if (!std::isfinite(total)) throw NumericalError("non-finite GMM log-likelihood");
  return total;
}

GmmFit fit_gmm(const GmmParams& init, const Matrix& data, const GmmFitOptions& options) {
  init.validate();
  const std::size_t k = init.states();
  if (static_cast<std::size_t>(data.rows()) < k) throw DataError("GMM fit needs at least as many rows as classes");

  GmmFit fit{init, {}};
  double ll = gmm_log_likelihood(fit.params, data, options.workers);
  fit.report.objective.push_back(ll);
  for (int iter = 1; iter <= options.max_iter; ++iter) {
    const Matrix resp = gmm_responsibilities(fit.params, data, EmissionMode::joint, options.workers);
    GmmParams next;
    next.weights = resp.colwise().sum().transpose();
    next.weights /= next.weights.sum();
    std::vector<std::optional<GaussianComponent>> comps(k);
    parallel_for(k, options.workers, [&](std::size_t c) {
      try {
        comps[c].emplace(weighted_mle(data, Vector(resp.col(static_cast<Eigen::Index>(c)))));
      } catch (const DegenerateClassError& err) {
        throw DegenerateClassError(c, err.what());
      }
    });
    for (auto& c : comps) next.components.push_back(std::move(*c));

    double change = (next.weights - fit.params.weights).squaredNorm();
    for (std::size_t c = 0; c < k; ++c) {
      change += (next.components[c].mu() - fit.params.components[c].mu()).squaredNorm() +
                (next.components[c].sigma() - fit.params.components[c].sigma()).squaredNorm();
    }
    fit.report.param_change.push_back(std::sqrt(change));

    const double next_ll = gmm_log_likelihood(next, data, options.workers);
    const double rel = (next_ll - ll) / std::max(std::abs(ll), 1e-300);
    fit.params = std::move(next);
    ll = next_ll;
    fit.report.objective.push_back(ll);
    fit.report.iterations = iter;
    fit.report.final_rel_improvement = rel;
    if (rel < options.tol) {
      fit.report.converged = true;
      break;
    }
  }
  return fit;
}

Prediction predict_ct_gmm(const GmmParams& params, std::span<const VoxelId> voxels, const Matrix& x_data,
                          unsigned workers) {
  params.validate();
  const Matrix w = gmm_responsibilities(params, x_data, EmissionMode::x_only, workers);
  return {std::vector<VoxelId>(voxels.begin(), voxels.end()), combine_predictions(w, params.components, x_data)};
}

GmmParams sort_states_by_mean_y(const GmmParams& params) {
  std::vector<std::size_t> perm(params.states());
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return params.components[a].mu_y() < params.components[b].mu_y();
  });
  GmmParams out;
  out.weights.resize(params.weights.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.weights(static_cast<Eigen::Index>(i)) = params.weights(static_cast<Eigen::Index>(perm[i]));
    out.components.push_back(params.components[perm[i]]);
  }
  return out;
}

}  // namespace pseudoct
