#include "pseudoct/model.hpp"

#include <algorithm>
#include <numeric>

#include "pseudoct/errors.hpp"
#include "pseudoct/random.hpp"

namespace pseudoct {

namespace {

struct Candidate {
  std::string name;
  GmmParams params;
};

// Rows of every head in raster order of its mask, stacked head after head.
Matrix pooled_rows(std::span<const Volume* const> heads, std::span<const std::string> channels,
                   const TrainingAudit& audit) {
  std::vector<Matrix> parts;
  Eigen::Index rows = 0;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto voxels = heads[h]->masked_voxels();
    parts.push_back(gather_channels(*heads[h], voxels, channels));
    rows += parts.back().rows();
    if (audit) audit(h, voxels.size());
  }
  Matrix out(rows, static_cast<Eigen::Index>(channels.size()));
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

std::vector<Candidate> mixture_starts(const Matrix& data, const FitConfig& config) {
  std::vector<Candidate> out;
  for (int s = 0; s < config.kmeans_starts; ++s) {
    KMeansOptions km;
    km.seed = derive_seed(config.seed, streams::kmeans + static_cast<std::uint64_t>(s));
    out.push_back({"kmeans:" + std::to_string(s), kmeans_init(data, config.k, km)});
  }
  if (config.hierarchical_start) {
    HierarchicalOptions ho;
    ho.seed = derive_seed(config.seed, streams::hierarchical);
    ho.subsample_cap = config.hierarchical_cap;
    out.push_back({"hierarchical", hierarchical_init(data, config.k, ho)});
  }
  if (out.empty()) throw DataError("fit configuration has no starts");
  return out;
}

struct BestGmm {
  GmmFit fit;
  std::string name;
};

BestGmm best_gmm(const Matrix& data, const FitConfig& config) {
  GmmFitOptions opt;
  opt.tol = config.resolved_tol();
  opt.max_iter = config.resolved_max_iter();
  opt.workers = config.workers;
  std::optional<BestGmm> best;
  std::string failures;
  for (auto& start : mixture_starts(data, config)) {
    try {
      GmmFit fit = fit_gmm(start.params, data, opt);
      if (!best || fit.report.objective.back() > best->fit.report.objective.back())
        best = BestGmm{std::move(fit), start.name};
    } catch (const NumericalError& err) {
      failures += "\n  " + start.name + ": " + err.what();
    }
  }
  if (!best) throw NumericalError("all GMM starts failed:" + failures);
  return std::move(*best);
}

Model fit_gmm_family(std::span<const Volume* const> heads, const FitConfig& config, const ChannelSelection& ch,
                     const TrainingAudit& audit) {
  const Matrix data = pooled_rows(heads, ch.joint(), audit);
  BestGmm best = best_gmm(data, config);
  Model m;
  m.family = Family::gmm;
  m.params = sort_states_by_mean_y(best.fit.params);
  m.report = std::move(best.fit.report);
  m.chosen_start = best.name;
  return m;
}

Model fit_hmm_family(std::span<const Volume* const> heads, const FitConfig& config, const ChannelSelection& ch,
                     const TrainingAudit& audit) {
  const auto joint = ch.joint();
  std::vector<SequencedData> parts;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    parts.push_back(sequence_volume(*heads[h], joint, config.sequence));
    if (audit) audit(h, parts.back().size());
  }
  const SequencedData pooled = concatenate(parts);

  HmmFitOptions opt;
  opt.tol = config.resolved_tol();
  opt.max_iter = config.resolved_max_iter();
  opt.workers = config.workers;

  std::vector<HmmParams> inits;
  std::vector<std::string> names;
  for (auto& start : mixture_starts(pooled.observations, config)) {
    inits.push_back(hmm_from_mixture(start.params.weights, std::move(start.params.components)));
    names.push_back(start.name);
  }
  if (heads.size() > 1) {
    for (std::size_t h = 0; h < parts.size(); ++h) {
      KMeansOptions km;
      km.seed = derive_seed(config.seed, streams::kmeans + 0x10 + h);
      try {
        GmmParams g = kmeans_init(parts[h].observations, config.k, km);
        HmmFit single = baum_welch(hmm_from_mixture(g.weights, std::move(g.components)), parts[h], opt);
        inits.push_back(std::move(single.params));
        names.push_back("head:" + std::to_string(h));
      } catch (const std::runtime_error&) {
        // A head that cannot support K classes on its own contributes no start.
      }
    }
  }
  MultiStartFit best = multi_start_fit(inits, pooled, opt);
  Model m;
  m.family = Family::hmm;
  m.params = sort_states_by_mean_y(best.params);
  m.report = std::move(best.report);
  m.chosen_start = names[best.chosen];
  m.hilbert_order = pooled.hilbert_order;
  return m;
}

Model fit_hmrf_family(std::span<const Volume* const> heads, const FitConfig& config, const ChannelSelection& ch,
                      const TrainingAudit& audit) {
  const Matrix data = pooled_rows(heads, ch.joint(), audit);
  std::vector<Lattice> lattices;
  for (const auto* h : heads) lattices.push_back(Lattice::from_volume(*h));
  const Lattice lattice = Lattice::disjoint_union(lattices);

  FitConfig gmm_config = config;
  gmm_config.tol.reset();
  gmm_config.max_iter.reset();
  gmm_config.family = Family::gmm;
  BestGmm init = best_gmm(data, gmm_config);

  MrfFitOptions opt;
  opt.tol = config.resolved_tol();
  opt.max_iter = config.resolved_max_iter();
  opt.gibbs = config.fit_gibbs;
  opt.gibbs.seed = derive_seed(config.seed, streams::gibbs);
  opt.freeze_beta = config.freeze_beta;
  opt.workers = config.workers;
  MrfFit fit = em_gradient_fit(
      mrf_from_mixture(init.fit.params.weights, init.fit.params.components, config.beta_init), data, lattice, opt);
  Model m;
  m.family = Family::hmrf;
  m.params = sort_states_by_mean_y(fit.params);
  m.report = std::move(fit.report);
  m.chosen_start = "gmm:" + init.name;
  return m;
}

Prediction sorted_by_voxel(Prediction p) {
  std::vector<std::size_t> order(p.voxels.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p.voxels[a] < p.voxels[b]; });
  Prediction out;
  out.voxels.reserve(order.size());
  out.values.reserve(order.size());
  for (auto i : order) {
    out.voxels.push_back(p.voxels[i]);
    out.values.push_back(p.values[i]);
  }
  return out;
}

}  // namespace

std::string to_string(Family family) {
  switch (family) {
    case Family::gmm:
      return "gmm";
    case Family::hmm:
      return "hmm";
    case Family::hmrf:
      return "hmrf";
  }
  return "?";
}

Family parse_family(const std::string& name) {
  if (name == "gmm") return Family::gmm;
  if (name == "hmm") return Family::hmm;
  if (name == "hmrf") return Family::hmrf;
  throw DataError("unknown model family '" + name + "' (expected gmm, hmm or hmrf)");
}

std::size_t Model::states() const { return components().size(); }

std::span<const GaussianComponent> Model::components() const {
  return std::visit([](const auto& p) { return std::span<const GaussianComponent>(p.components); }, params);
}

double FitConfig::resolved_tol() const { return tol.value_or(family == Family::hmrf ? 1e-3 : 1e-6); }

int FitConfig::resolved_max_iter() const { return max_iter.value_or(family == Family::hmrf ? 50 : 500); }

Model fit_model(std::span<const Volume* const> heads, const FitConfig& config, const TrainingAudit& audit) {
  if (heads.empty()) throw DataError("no training volumes");
  if (config.k < 1) throw DataError("K must be >= 1");
  ChannelSelection ch = config.channels.resolved(heads.front()->header());
  for (const auto* h : heads) {
    require_channels(h->header(), ch.joint());
  }
  Model m;
  switch (config.family) {
    case Family::gmm:
      m = fit_gmm_family(heads, config, ch, audit);
      break;
    case Family::hmm:
      m = fit_hmm_family(heads, config, ch, audit);
      break;
    case Family::hmrf:
      m = fit_hmrf_family(heads, config, ch, audit);
      break;
  }
  m.channels = std::move(ch);
  return m;
}

Model fit_model(const Volume& head, const FitConfig& config) {
  const Volume* one[] = {&head};
  return fit_model(one, config);
}

Prediction predict_model(const Model& model, const Volume& volume, const FitConfig& config) {
  const auto& cov = model.channels.covariates;
  require_channels(volume.header(), cov);
  switch (model.family) {
    case Family::gmm: {
      const auto voxels = volume.masked_voxels();
      return predict_ct_gmm(std::get<GmmParams>(model.params), voxels, gather_channels(volume, voxels, cov),
                            config.workers);
    }
    case Family::hmm: {
      const SequencedData seq = sequence_volume(volume, cov, config.sequence);
      return sorted_by_voxel(predict_ct(std::get<HmmParams>(model.params), seq, config.workers));
    }
    case Family::hmrf: {
      const Lattice lattice = Lattice::from_volume(volume);
      GibbsOptions g = config.predict_gibbs;
      g.seed = derive_seed(config.seed, streams::gibbs + 1);
      return predict_ct_mrf(std::get<MrfParams>(model.params), gather_channels(volume, lattice.voxels(), cov), lattice,
                            g);
    }
  }
  throw DataError("unknown model family");
}

std::vector<double> truth_at(const Volume& volume, const std::string& target, std::span<const VoxelId> voxels) {
  require_channels(volume.header(), std::span<const std::string>(&target, 1));
  const auto ch = volume.channel(target);
  std::vector<double> out;
  out.reserve(voxels.size());
  for (auto v : voxels) out.push_back(static_cast<double>(ch[static_cast<std::size_t>(v)]));
  return out;
}

}  // namespace pseudoct
