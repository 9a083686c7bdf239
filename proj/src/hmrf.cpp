#include "pseudoct/hmrf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <Eigen/Dense>

#include "pseudoct/errors.hpp"
#include "pseudoct/parallel.hpp"
#include "pseudoct/random.hpp"

namespace pseudoct {

Lattice Lattice::from_mask(const std::array<std::int64_t, 3>& dims, const std::vector<bool>& mask) {
  const auto nx = dims[0], ny = dims[1], nz = dims[2];
  if (static_cast<std::int64_t>(mask.size()) != nx * ny * nz) throw DataError("mask size does not match lattice dims");
  Lattice out;
  std::vector<std::int64_t> site_of(mask.size(), -1);
  for (std::size_t v = 0; v < mask.size(); ++v) {
    if (mask[v]) {
      site_of[v] = static_cast<std::int64_t>(out.voxels_.size());
      out.voxels_.push_back(static_cast<VoxelId>(v));
    }
  }
  for (VoxelId v : out.voxels_) {
    const std::int64_t x = v % nx, y = (v / nx) % ny, z = v / (nx * ny);
    const std::array<std::array<std::int64_t, 3>, 6> steps{{{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};
    for (const auto& s : steps) {
      const auto xx = x + s[0], yy = y + s[1], zz = z + s[2];
      if (xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz) continue;
      const auto site = site_of[static_cast<std::size_t>(xx + nx * (yy + ny * zz))];
      if (site >= 0) out.adjacency_.push_back(static_cast<std::size_t>(site));
    }
    out.offsets_.push_back(out.adjacency_.size());
  }
  out.build_pairs();
  return out;
}

Lattice Lattice::from_volume(const Volume& volume) {
  std::vector<bool> mask(static_cast<std::size_t>(volume.voxel_count()));
  for (VoxelId v = 0; v < volume.voxel_count(); ++v) mask[static_cast<std::size_t>(v)] = volume.inside(v);
  return from_mask(volume.dims(), mask);
}

Lattice Lattice::full(const std::array<std::int64_t, 3>& dims) {
  return from_mask(dims, std::vector<bool>(static_cast<std::size_t>(dims[0] * dims[1] * dims[2]), true));
}

Lattice Lattice::disjoint_union(std::span<const Lattice> parts) {
  Lattice out;
  std::size_t base = 0;
  for (const auto& p : parts) {
    out.voxels_.insert(out.voxels_.end(), p.voxels_.begin(), p.voxels_.end());
    for (std::size_t s = 0; s < p.size(); ++s) {
      for (auto nb : p.neighbours(s)) out.adjacency_.push_back(nb + base);
      out.offsets_.push_back(out.adjacency_.size());
    }
    base += p.size();
  }
  out.build_pairs();
  return out;
}

void Lattice::build_pairs() {
  pairs_.clear();
  for (std::size_t u = 0; u < size(); ++u) {
    for (auto v : neighbours(u)) {
      if (u < v) pairs_.emplace_back(u, v);
    }
  }
}

void MrfParams::validate() const {
  const auto k = static_cast<Eigen::Index>(components.size());
  if (k < 1) throw DataError("HMRF needs at least one class");
  if (alpha.size() != k || beta.size() != k) throw DataError("HMRF alpha/beta length does not match classes");
  if (!alpha.allFinite() || !beta.allFinite()) throw DataError("HMRF potentials must be finite");
  if (alpha(0) != 0.0) throw DataError("HMRF alpha[0] must be exactly 0");
}

double energy(std::span<const std::uint16_t> labels, const Lattice& lattice, const Vector& alpha, const Vector& beta) {
  if (labels.size() != lattice.size()) throw DataError("label count does not match lattice size");
  double h = 0.0;
  for (auto z : labels) {
    if (z >= alpha.size()) throw DataError("label " + std::to_string(z) + " out of range");
    h += alpha(z);
  }
  for (const auto& [u, v] : lattice.pairs()) {
    if (labels[u] == labels[v]) h += beta(labels[u]);
  }
  return h;
}

namespace {

template <class Fn>
void enumerate_configurations(std::size_t n, std::size_t k, Fn&& fn) {
  Labels z(n, 0);
  while (true) {
    fn(z);
    std::size_t i = 0;
    while (i < n && ++z[i] == k) z[i++] = 0;
    if (i == n) break;
  }
}

void check_enumerable(std::size_t n, std::size_t k) {
  if (std::pow(static_cast<double>(k), static_cast<double>(n)) > kMaxEnumeration)
    throw DataError("lattice too large for exact enumeration (" + std::to_string(k) + "^" + std::to_string(n) +
                    " configurations)");
}

}  // namespace

Matrix exact_posterior(const Vector& alpha, const Vector& beta, const Matrix& log_emission, const Lattice& lattice) {
  const std::size_t n = lattice.size();
  const auto k = static_cast<std::size_t>(alpha.size());
  if (static_cast<std::size_t>(log_emission.rows()) != n || static_cast<std::size_t>(log_emission.cols()) != k)
    throw DataError("emission table does not match lattice/classes");
  check_enumerable(n, k);
  std::vector<double> log_w;
  enumerate_configurations(n, k, [&](const Labels& z) {
    double lw = -energy(z, lattice, alpha, beta);
    for (std::size_t u = 0; u < n; ++u) lw += log_emission(static_cast<Eigen::Index>(u), z[u]);
    log_w.push_back(lw);
  });
  const double mx = *std::max_element(log_w.begin(), log_w.end());
  Matrix marg = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  double total = 0.0;
  std::size_t idx = 0;
  enumerate_configurations(n, k, [&](const Labels& z) {
    const double w = std::exp(log_w[idx++] - mx);
    total += w;
    for (std::size_t u = 0; u < n; ++u) marg(static_cast<Eigen::Index>(u), z[u]) += w;
  });
  return marg / total;
}

double exact_log_partition(const Vector& alpha, const Vector& beta, const Lattice& lattice, std::size_t states) {
  check_enumerable(lattice.size(), states);
  std::vector<double> log_w;
  enumerate_configurations(lattice.size(), states, [&](const Labels& z) { log_w.push_back(-energy(z, lattice, alpha, beta)); });
  const double mx = *std::max_element(log_w.begin(), log_w.end());
  double total = 0.0;
  for (double lw : log_w) total += std::exp(lw - mx);
  return mx + std::log(total);
}

Vector site_conditional(const Vector& alpha, const Vector& beta, const Matrix& log_emission, const Lattice& lattice,
                        std::span<const std::uint16_t> labels, std::size_t site) {
  Vector logits = -alpha + log_emission.row(static_cast<Eigen::Index>(site)).transpose();
  for (auto nb : lattice.neighbours(site)) logits(labels[nb]) -= beta(labels[nb]);
  const double mx = logits.maxCoeff();
  Vector p = (logits.array() - mx).exp();
  if (!p.allFinite() || !std::isfinite(mx)) throw NumericalError("non-finite Gibbs site conditional at site " + std::to_string(site));
  return p / p.sum();
}

GibbsResult gibbs_posterior(const Vector& alpha, const Vector& beta, const Matrix& log_emission, const Lattice& lattice,
                            const GibbsOptions& options, const std::optional<Labels>& start) {
  const std::size_t n = lattice.size();
  const auto k = static_cast<std::size_t>(alpha.size());
  if (options.burn_in < 0 || options.samples < 1) throw DataError("Gibbs sampler needs burn_in >= 0 and samples >= 1");
  if (static_cast<std::size_t>(log_emission.rows()) != n || static_cast<std::size_t>(log_emission.cols()) != k)
    throw DataError("emission table does not match lattice/classes");
  if (!log_emission.allFinite()) throw NumericalError("non-finite emission log-density");
  if (beta.size() != alpha.size()) throw DataError("alpha/beta length mismatch");

  Labels z;
  if (start) {
    if (start->size() != n) throw DataError("Gibbs start labels do not match lattice");
    z = *start;
  } else {
    z.resize(n);
    for (std::size_t u = 0; u < n; ++u) {
      Eigen::Index best = 0;
      (log_emission.row(static_cast<Eigen::Index>(u)).transpose() - alpha).maxCoeff(&best);
      z[u] = static_cast<std::uint16_t>(best);
    }
  }

  Rng rng(derive_seed(options.seed, streams::gibbs));
  GibbsResult out;
  const auto rows = static_cast<Eigen::Index>(n), cols = static_cast<Eigen::Index>(k);
  Matrix batch = Matrix::Zero(rows, cols), mean_sum = Matrix::Zero(rows, cols), mean_sq = Matrix::Zero(rows, cols);
  Matrix counts = Matrix::Zero(rows, cols);
  const int batches = std::clamp(options.batches, 1, options.samples);
  int batch_index = 0, in_batch = 0;
  auto batch_end = [&](int b) { return static_cast<int>((static_cast<long long>(b + 1) * options.samples) / batches); };

  double h = options.track_energy ? energy(z, lattice, alpha, beta) : 0.0;
  std::vector<double> logits(k), probs(k);
  const int sweeps = options.burn_in + options.samples;
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t c = 0; c < k; ++c) logits[c] = -alpha(static_cast<Eigen::Index>(c)) + log_emission(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(c));
      for (auto nb : lattice.neighbours(u)) logits[z[nb]] -= beta(z[nb]);
      const double mx = *std::max_element(logits.begin(), logits.end());
      if (!std::isfinite(mx)) throw NumericalError("non-finite Gibbs site conditional at site " + std::to_string(u));
      double total = 0.0;
      for (std::size_t c = 0; c < k; ++c) total += probs[c] = std::exp(logits[c] - mx);
      double r = rng.uniform() * total;
      std::size_t pick = 0;
      while (pick + 1 < k && (r -= probs[pick]) >= 0.0) ++pick;
      if (options.track_energy && pick != z[u]) {
        const std::size_t old = z[u];
        std::size_t same_old = 0, same_new = 0;
        for (auto nb : lattice.neighbours(u)) {
          same_old += z[nb] == old;
          same_new += z[nb] == pick;
        }
        h += alpha(static_cast<Eigen::Index>(pick)) - alpha(static_cast<Eigen::Index>(old)) +
             beta(static_cast<Eigen::Index>(pick)) * static_cast<double>(same_new) -
             beta(static_cast<Eigen::Index>(old)) * static_cast<double>(same_old);
      }
      z[u] = static_cast<std::uint16_t>(pick);
    }
    if (options.track_energy) {
      out.energy_trace.push_back(h);
      out.energy_check.push_back(energy(z, lattice, alpha, beta));
    }
    if (sweep < options.burn_in) continue;
    for (std::size_t u = 0; u < n; ++u) batch(static_cast<Eigen::Index>(u), z[u]) += 1.0;
    ++in_batch;
    if (sweep - options.burn_in + 1 == batch_end(batch_index)) {
      counts += batch;
      const Matrix f = batch / static_cast<double>(in_batch);
      mean_sum += f;
      mean_sq += f.cwiseProduct(f);
      batch.setZero();
      in_batch = 0;
      ++batch_index;
    }
  }
  out.marginals = counts / static_cast<double>(options.samples);
  if (batches > 1) {
    const double b = static_cast<double>(batches);
    const Matrix mean = mean_sum / b;
    const Matrix var = ((mean_sq / b) - mean.cwiseProduct(mean)).cwiseMax(0.0) * (b / (b - 1.0));
    out.std_errors = (var / b).cwiseSqrt();
  } else {
    out.std_errors = Matrix::Zero(rows, cols);
  }
  out.final_labels = std::move(z);
  return out;
}

Vector pack_potentials(const Vector& alpha, const Vector& beta) {
  const auto k = alpha.size();
  Vector theta(2 * k - 1);
  theta.head(k - 1) = alpha.tail(k - 1);
  theta.tail(k) = beta;
  return theta;
}

void unpack_potentials(const Vector& theta, Vector& alpha, Vector& beta) {
  const auto k = (theta.size() + 1) / 2;
  alpha.resize(k);
  alpha(0) = 0.0;
  alpha.tail(k - 1) = theta.head(k - 1);
  beta = theta.tail(k);
}

PllResult pseudo_log_likelihood(const Vector& alpha, const Vector& beta, const Matrix& weights, const Lattice& lattice) {
  const auto k = alpha.size();
  const auto n = static_cast<Eigen::Index>(lattice.size());
  if (weights.rows() != n || weights.cols() != k) throw DataError("weights do not match lattice/classes");
  const auto dim = 2 * k - 1;
  PllResult out;
  out.gradient = Vector::Zero(dim);
  out.hessian = Matrix::Zero(dim, dim);

  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(k, dim);
  Eigen::VectorXd eta(k), p(k), r(k), c(k);
  Eigen::MatrixXd curvature(k, k);
  for (Eigen::Index u = 0; u < n; ++u) {
    c.setZero();
    for (auto nb : lattice.neighbours(static_cast<std::size_t>(u))) c += weights.row(static_cast<Eigen::Index>(nb)).transpose();
    eta = -alpha - beta.cwiseProduct(c);
    const double mx = eta.maxCoeff();
    p = (eta.array() - mx).exp();
    const double z = p.sum();
    p /= z;
    const double lse = mx + std::log(z);
    const Eigen::VectorXd w = weights.row(u).transpose();
    const double s = w.sum();
    out.value += w.dot(eta) - s * lse;

    for (Eigen::Index j = 0; j < k; ++j) {
      if (j > 0) jac(j, j - 1) = -1.0;
      jac(j, (k - 1) + j) = -c(j);
    }
    r = w - s * p;
    out.gradient.noalias() += jac.transpose() * r;
    curvature = -s * (Eigen::MatrixXd(p.asDiagonal()) - p * p.transpose());
    out.hessian.noalias() += jac.transpose() * curvature * jac;
  }
  return out;
}

namespace {

Vector potential_vector(const MrfParams& p) {
  Vector v(p.alpha.size() + p.beta.size());
  v << p.alpha, p.beta;
  return v;
}

Vector gaussian_vector(const MrfParams& p) {
  std::vector<double> v;
  for (const auto& c : p.components) {
    v.insert(v.end(), c.mu().begin(), c.mu().end());
    for (Eigen::Index i = 0; i < c.sigma().rows(); ++i)
      for (Eigen::Index j = i; j < c.sigma().cols(); ++j) v.push_back(c.sigma()(i, j));
  }
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Largest relative change over the potential and Gaussian blocks, so that
// the covariance scale cannot mask movement in the potentials.
double relative_change(const MrfParams& before, const MrfParams& after) {
  auto rel = [](const Vector& a, const Vector& b) { return (b - a).norm() / std::max(1.0, b.norm()); };
  return std::max(rel(potential_vector(before), potential_vector(after)),
                  rel(gaussian_vector(before), gaussian_vector(after)));
}

Matrix independent_posterior(const Vector& alpha, const Matrix& log_emission) {
  Matrix logits = log_emission;
  for (Eigen::Index k = 0; k < logits.cols(); ++k) logits.col(k).array() -= alpha(k);
  const Vector norm = log_sum_exp_rows(logits);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) logits.row(i) = (logits.row(i).array() - norm(i)).exp();
  return logits;
}

// Newton direction -H^-1 g restricted to the active coordinates; singular
// directions (e.g. classes with no neighbours) are left unchanged.
Vector newton_direction(const PllResult& pll, Eigen::Index active) {
  const Eigen::MatrixXd neg_h = -pll.hessian.topLeftCorner(active, active);
  const Eigen::VectorXd g = pll.gradient.head(active);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(neg_h);
  Eigen::VectorXd step;
  if (ldlt.info() == Eigen::Success && ldlt.isPositive() && (ldlt.vectorD().array() > 1e-12 * std::max(1.0, neg_h.diagonal().cwiseAbs().maxCoeff())).all()) {
    step = ldlt.solve(g);
  } else {
    step = neg_h.completeOrthogonalDecomposition().solve(g);
  }
  Vector full = Vector::Zero(pll.gradient.size());
  full.head(active) = step;
  return full;
}

}  // namespace

MrfFit em_gradient_fit(const MrfParams& init, const Matrix& observations, const Lattice& lattice,
                       const MrfFitOptions& options) {
  init.validate();
  if (static_cast<std::size_t>(observations.rows()) != lattice.size())
    throw DataError("observation rows do not match lattice size");
  const auto k = static_cast<Eigen::Index>(init.states());

  MrfFit fit{init, {}, {}, {}};
  std::optional<Labels> labels;
  const bool exact_estep = options.freeze_beta && (init.beta.array() == 0.0).all();
  // alpha_2..alpha_K are always updated; beta only when not frozen.
  const Eigen::Index active = options.freeze_beta ? k - 1 : 2 * k - 1;

  for (int iter = 1; iter <= options.max_iter; ++iter) {
    const MrfParams& cur = fit.params;
    const Matrix log_e = log_emissions(cur.components, observations, EmissionMode::joint, options.workers);
    Matrix w;
    if (exact_estep) {
      w = independent_posterior(cur.alpha, log_e);
    } else {
      GibbsOptions g = options.gibbs;
      g.seed = derive_seed(options.gibbs.seed, static_cast<std::uint64_t>(iter));
      auto res = gibbs_posterior(cur.alpha, cur.beta, log_e, lattice, g, labels);
      labels = std::move(res.final_labels);
      w = std::move(res.marginals);
    }

    MrfParams next;
    std::vector<std::optional<GaussianComponent>> comps(static_cast<std::size_t>(k));
    parallel_for(static_cast<std::size_t>(k), options.workers, [&](std::size_t c) {
      try {
        comps[c].emplace(weighted_mle(observations, Vector(w.col(static_cast<Eigen::Index>(c)))));
      } catch (const DegenerateClassError& err) {
        throw DegenerateClassError(c, err.what());
      }
    });
    for (auto& c : comps) next.components.push_back(std::move(*c));

    const Vector theta = pack_potentials(cur.alpha, cur.beta);
    const PllResult pll = pseudo_log_likelihood(cur.alpha, cur.beta, w, lattice);
    if (k > 1 && exact_estep) {
      // With beta held at zero the pseudo-likelihood is a multinomial
      // likelihood in alpha, maximized in closed form.
      const Vector n = w.colwise().sum().transpose();
      next.alpha = (std::log(n(0)) - n.array().log()).matrix();
      next.alpha(0) = 0.0;
      next.beta = cur.beta;
      fit.report.objective.push_back(pseudo_log_likelihood(next.alpha, next.beta, w, lattice).value);
    } else if (k > 1) {
      Vector step = newton_direction(pll, active);
      double value = pll.value;
      bool accepted = false;
      for (int halving = 0; halving <= 10; ++halving) {
        Vector a, b;
        unpack_potentials(theta + step, a, b);
        const double trial = pseudo_log_likelihood(a, b, w, lattice).value;
        if (trial >= pll.value - 1e-12 * std::abs(pll.value)) {
          next.alpha = a;
          next.beta = b;
          value = trial;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        if (pll.gradient.head(active).norm() > 1e-8 * static_cast<double>(lattice.size()))
          throw NumericalError("Newton step on the pseudo-likelihood failed after 10 halvings");
        next.alpha = cur.alpha;
        next.beta = cur.beta;
      }
      fit.report.objective.push_back(value);
    } else {
      next.alpha = cur.alpha;
      next.beta = cur.beta;
      fit.report.objective.push_back(pll.value);
    }

    const double rel = relative_change(cur, next);
    fit.report.param_change.push_back(rel);
    fit.report.iterations = iter;
    fit.weights = std::move(w);
    fit.params = std::move(next);
    fit.trace.push_back(fit.params);
    if (rel < options.tol) {
      fit.report.converged = true;
      break;
    }
  }
  if (fit.report.objective.size() >= 2) {
    const auto& o = fit.report.objective;
    fit.report.final_rel_improvement = (o.back() - o[o.size() - 2]) / std::max(std::abs(o[o.size() - 2]), 1e-300);
  }
  return fit;
}

PosteriorWeights mrf_posterior_weights(const MrfParams& params, const Matrix& x_observations, const Lattice& lattice,
                                       const GibbsOptions& options) {
  params.validate();
  if (static_cast<std::size_t>(x_observations.rows()) != lattice.size())
    throw DataError("observation rows do not match lattice size");
  const Matrix log_e = log_emissions(params.components, x_observations, EmissionMode::x_only);
  auto res = gibbs_posterior(params.alpha, params.beta, log_e, lattice, options);
  return {lattice.voxels(), std::move(res.marginals)};
}

Prediction predict_ct_mrf(const MrfParams& params, const Matrix& x_observations, const Lattice& lattice,
                          const GibbsOptions& options) {
  const auto w = mrf_posterior_weights(params, x_observations, lattice, options);
  return {w.voxels, combine_predictions(w.weights, params.components, x_observations)};
}

Prediction predict_ct_mrf_exact(const MrfParams& params, const Matrix& x_observations, const Lattice& lattice) {
  params.validate();
  const Matrix log_e = log_emissions(params.components, x_observations, EmissionMode::x_only);
  const Matrix w = exact_posterior(params.alpha, params.beta, log_e, lattice);
  return {lattice.voxels(), combine_predictions(w, params.components, x_observations)};
}

MrfParams mrf_from_mixture(const Vector& weights, std::vector<GaussianComponent> components, double beta0) {
  const auto k = weights.size();
  MrfParams out;
  out.alpha.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) out.alpha(i) = std::log(weights(0)) - std::log(weights(i));
  out.alpha(0) = 0.0;
  out.beta = Vector::Constant(k, beta0);
  out.components = std::move(components);
  return out;
}

MrfParams sort_states_by_mean_y(const MrfParams& params) {
  std::vector<std::size_t> perm(params.states());
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return params.components[a].mu_y() < params.components[b].mu_y();
  });
  MrfParams out;
  const auto k = params.alpha.size();
  out.alpha.resize(k);
  out.beta.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    out.alpha(i) = params.alpha(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)])) -
                   params.alpha(static_cast<Eigen::Index>(perm[0]));
    out.beta(i) = params.beta(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]));
    out.components.push_back(params.components[perm[static_cast<std::size_t>(i)]]);
  }
  out.alpha(0) = 0.0;
  return out;
}

}  // namespace pseudoct
