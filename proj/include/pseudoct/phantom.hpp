#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pseudoct/hmm.hpp"
#include "pseudoct/hmrf.hpp"
#include "pseudoct/random.hpp"
#include "pseudoct/volume_io.hpp"

namespace pseudoct {

enum class LabelModel { potts, hmm };
enum class MaskShape { full, ellipsoid };

// Synthetic head. Components are joint (CT, UTE1..UTEm) Gaussians shared by
// both label models; `potts` uses alpha/beta, `hmm` uses pi/trans.
//
// Sign convention: p(z) is proportional to exp(-H(z)), so labels cluster when
// beta < 0 and become checkerboard-like when beta > 0.
struct PhantomSpec {
  std::array<std::int64_t, 3> dims{32, 32, 32};
  std::array<double, 3> voxel_size_mm{1.0, 1.0, 1.0};
  LabelModel label_model = LabelModel::potts;
  std::vector<GaussianComponent> components;
  Vector alpha;
  Vector beta;
  Vector pi;
  Matrix trans;
  MaskShape mask = MaskShape::ellipsoid;
  std::optional<std::array<double, 3>> semi_axes;  // default: dims / 2
  int sweeps = 200;
  std::uint64_t seed = 1;
  int n_heads = 1;

  std::size_t states() const { return components.size(); }
  std::vector<std::string> channel_names() const;  // mask, CT, UTE1..UTEm
  MrfParams mrf() const;
  HmmParams hmm() const;
  void validate() const;
};

// Label value stored for voxels that carry no label (HMM phantoms, outside
// the mask).
inline constexpr std::uint16_t kNoLabel = 0xFFFF;

struct Phantom {
  Volume volume;
  Labels labels;  // one per grid voxel, raster order
};

std::vector<bool> phantom_mask(const PhantomSpec& spec);

// Potts phantoms sample labels over the whole box with `sweeps` Gibbs sweeps
// of the prior from an i.i.d. softmax(-alpha) start, draw per-voxel
// observations, then zero everything outside the mask. HMM phantoms run the
// chain along the curve segments of the masked box. Deterministic in seed.
Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

// Seed of ensemble member h.
std::uint64_t ensemble_seed(std::uint64_t root, std::size_t h);

std::vector<Phantom> generate_ensemble(const PhantomSpec& spec, unsigned workers = 1);

// Mean over lattice neighbour pairs (within the mask) of [z_u == z_v].
double same_label_fraction(const Phantom& phantom);

// Draws from the component's joint Gaussian.
class GaussianSampler {
 public:
  explicit GaussianSampler(const GaussianComponent& component);
  Vector operator()(Rng& rng) const;

 private:
  Vector mu_;
  Matrix lower_;
};

}  // namespace pseudoct
