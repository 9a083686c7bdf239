#include "pseudoct/phantom.hpp"

#include <cmath>
#include <string>

#include "pseudoct/errors.hpp"
#include "pseudoct/hilbert.hpp"
#include "pseudoct/parallel.hpp"

namespace pseudoct {

namespace {

constexpr std::uint64_t kLabelStream = streams::phantom + 1;
constexpr std::uint64_t kChainStream = streams::phantom + 2;
constexpr std::uint64_t kObservationStream = streams::phantom + 3;

std::size_t draw_index(Rng& rng, const Eigen::Ref<const Eigen::RowVectorXd>& probs) {
  double r = rng.uniform() * probs.sum();
  Eigen::Index pick = 0;
  while (pick + 1 < probs.size() && (r -= probs(pick)) >= 0.0) ++pick;
  return static_cast<std::size_t>(pick);
}

Labels potts_labels(const PhantomSpec& spec, std::uint64_t seed) {
  const Lattice lattice = Lattice::full(spec.dims);
  const auto k = static_cast<Eigen::Index>(spec.states());
  Eigen::RowVectorXd prior = (-spec.alpha.array() + spec.alpha.minCoeff()).exp().matrix().transpose();
  prior /= prior.sum();

  Rng rng(derive_seed(seed, kLabelStream));
  Labels start(lattice.size());
  for (auto& z : start) z = static_cast<std::uint16_t>(draw_index(rng, prior));

  GibbsOptions g;
  g.burn_in = spec.sweeps - 1;
  g.samples = 1;
  g.batches = 1;
  g.seed = derive_seed(seed, kLabelStream + 0x10);
  const Matrix zero = Matrix::Zero(static_cast<Eigen::Index>(lattice.size()), k);
  return gibbs_posterior(spec.alpha, spec.beta, zero, lattice, g, start).final_labels;
}

Labels hmm_labels(const PhantomSpec& spec, const std::vector<bool>& mask, std::uint64_t seed) {
  VolumeHeader header;
  header.dims = spec.dims;
  header.channels = {kMaskChannel};
  std::vector<float> data(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) data[i] = mask[i] ? 1.0f : 0.0f;
  const Volume shape(header, std::move(data));
  const SequencedData seq = sequence_volume(shape, {});

  Labels labels(mask.size(), kNoLabel);
  Rng rng(derive_seed(seed, kChainStream));
  for (std::size_t s = 0; s < seq.segment_count(); ++s) {
    std::size_t state = draw_index(rng, spec.pi.transpose());
    const std::size_t begin = seq.segment_begin(s);
    for (std::size_t t = 0; t < seq.segment_length(s); ++t) {
      if (t > 0) state = draw_index(rng, spec.trans.row(static_cast<Eigen::Index>(state)));
      labels[static_cast<std::size_t>(seq.voxels[begin + t])] = static_cast<std::uint16_t>(state);
    }
  }
  return labels;
}

}  // namespace

std::vector<std::string> PhantomSpec::channel_names() const {
  std::vector<std::string> names{kMaskChannel, "CT"};
  const std::size_t m = components.empty() ? 0 : components.front().covariate_dim();
  for (std::size_t j = 1; j <= m; ++j) names.push_back("UTE" + std::to_string(j));
  return names;
}

MrfParams PhantomSpec::mrf() const { return {alpha, beta, components}; }

HmmParams PhantomSpec::hmm() const { return {pi, trans, components}; }

void PhantomSpec::validate() const {
  for (auto d : dims) {
    if (d < 2) throw DataError("phantom dims must be >= 2 per axis");
  }
  if (components.empty()) throw DataError("phantom needs at least one class");
  if (components.front().dim() < 2) throw DataError("phantom components need CT plus at least one covariate");
  for (const auto& c : components) {
    if (c.dim() != components.front().dim()) throw DataError("phantom components have inconsistent dimensions");
  }
  if (label_model == LabelModel::potts) {
    mrf().validate();
  } else {
    hmm().validate();
  }
  if (sweeps < 1) throw DataError("phantom sweeps must be >= 1");
  if (n_heads < 1) throw DataError("phantom n_heads must be >= 1");
  if (semi_axes) {
    for (double a : *semi_axes) {
      if (!(a > 0.0)) throw DataError("ellipsoid semi-axes must be positive");
    }
  }
}

std::vector<bool> phantom_mask(const PhantomSpec& spec) {
  const auto [nx, ny, nz] = spec.dims;
  std::vector<bool> mask(static_cast<std::size_t>(nx * ny * nz), true);
  if (spec.mask == MaskShape::full) return mask;
  const std::array<double, 3> axes =
      spec.semi_axes.value_or(std::array<double, 3>{nx / 2.0, ny / 2.0, nz / 2.0});
  std::size_t i = 0;
  for (std::int64_t z = 0; z < nz; ++z) {
    for (std::int64_t y = 0; y < ny; ++y) {
      for (std::int64_t x = 0; x < nx; ++x, ++i) {
        const double dx = (static_cast<double>(x) - (nx - 1) / 2.0) / axes[0];
        const double dy = (static_cast<double>(y) - (ny - 1) / 2.0) / axes[1];
        const double dz = (static_cast<double>(z) - (nz - 1) / 2.0) / axes[2];
        mask[i] = dx * dx + dy * dy + dz * dz <= 1.0;
      }
    }
  }
  return mask;
}

GaussianSampler::GaussianSampler(const GaussianComponent& component) : mu_(component.mu()) {
  const Eigen::MatrixXd sigma = component.sigma();
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw NumericalError("component covariance is not positive definite");
  lower_ = llt.matrixL();
}

Vector GaussianSampler::operator()(Rng& rng) const {
  Vector e(mu_.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = rng.normal();
  return mu_ + lower_ * e;
}

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::vector<bool> mask = phantom_mask(spec);

  Phantom out;
  out.labels = spec.label_model == LabelModel::potts ? potts_labels(spec, seed) : hmm_labels(spec, mask, seed);

  VolumeHeader header;
  header.dims = spec.dims;
  header.voxel_size_mm = spec.voxel_size_mm;
  header.channels = spec.channel_names();
  const std::size_t n = mask.size();
  const std::size_t d = spec.components.front().dim();
  std::vector<float> data((d + 1) * n, 0.0f);

  std::vector<GaussianSampler> samplers;
  for (const auto& c : spec.components) samplers.emplace_back(c);
  Rng rng(derive_seed(seed, kObservationStream));
  for (std::size_t v = 0; v < n; ++v) {
    if (!mask[v]) continue;
    data[v] = 1.0f;
    const Vector obs = samplers[out.labels[v]](rng);
    for (std::size_t j = 0; j < d; ++j) data[(j + 1) * n + v] = static_cast<float>(obs(static_cast<Eigen::Index>(j)));
  }
  // The mask goes on last: labels outside it are dropped.
  for (std::size_t v = 0; v < n; ++v) {
    if (!mask[v]) out.labels[v] = kNoLabel;
  }
  out.volume = Volume(std::move(header), std::move(data));
  return out;
}

std::uint64_t ensemble_seed(std::uint64_t root, std::size_t h) {
  return derive_seed(derive_seed(root, streams::ensemble), h);
}

std::vector<Phantom> generate_ensemble(const PhantomSpec& spec, unsigned workers) {
  spec.validate();
  std::vector<Phantom> heads(static_cast<std::size_t>(spec.n_heads));
  parallel_for(heads.size(), workers, [&](std::size_t h) { heads[h] = generate_phantom(spec, ensemble_seed(spec.seed, h)); });
  return heads;
}

double same_label_fraction(const Phantom& phantom) {
  const Lattice lattice = Lattice::from_volume(phantom.volume);
  std::size_t same = 0, total = 0;
  for (const auto& [u, v] : lattice.pairs()) {
    const auto a = phantom.labels[static_cast<std::size_t>(lattice.voxels()[u])];
    const auto b = phantom.labels[static_cast<std::size_t>(lattice.voxels()[v])];
    if (a == kNoLabel || b == kNoLabel) continue;
    ++total;
    same += a == b;
  }
  if (total == 0) throw DataError("phantom has no labelled neighbour pairs");
  return static_cast<double>(same) / static_cast<double>(total);
}

}  // namespace pseudoct
