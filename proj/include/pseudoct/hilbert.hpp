#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pseudoct/types.hpp"
#include "pseudoct/volume_io.hpp"

namespace pseudoct {

using Coords = std::array<std::uint32_t, 3>;

// Order p of a 3D Hilbert curve filling a 2^p cube.
class HilbertOrder {
 public:
  static constexpr int kMax = 10;

  explicit HilbertOrder(int order);

  int value() const { return order_; }
  std::uint32_t side() const { return 1u << order_; }
  std::uint64_t length() const { return std::uint64_t{1} << (3 * order_); }

  // Smallest order whose cube side covers every extent in dims.
  static HilbertOrder covering(const std::array<std::int64_t, 3>& dims);

  friend bool operator==(HilbertOrder, HilbertOrder) = default;

 private:
  int order_;
};

// Index <-> lattice point via Skilling's transpose algorithm. Index 0 is the
// origin and the last point is (2^p - 1, 0, 0) for every order. The first
// step rotates with the order: along z, y, x for orders 1, 2, 3, and so on.
Coords index_to_coords(HilbertOrder order, std::uint64_t d);
std::uint64_t coords_to_index(HilbertOrder order, Coords c);

// True when a and b differ by exactly one in exactly one axis.
bool lattice_neighbours(const std::array<std::int64_t, 3>& a, const std::array<std::int64_t, 3>& b);

struct SequenceStats {
  std::size_t voxels = 0;
  std::size_t segments = 0;
  std::size_t singletons = 0;
  std::size_t max_length = 0;
  std::map<std::size_t, std::size_t> length_histogram;
  // Share of voxels with a predecessor and a successor in their segment.
  double two_neighbour_fraction = 0.0;
};

// Ordered independent observation segments. Rows of `observations` follow
// the curve; segment s spans rows [starts[s], starts[s+1]).
struct SequencedData {
  std::vector<VoxelId> voxels;
  Matrix observations;
  std::vector<std::size_t> starts{0};
  int hilbert_order = 0;
  std::array<std::int64_t, 3> offset{0, 0, 0};

  std::size_t segment_count() const { return starts.size() - 1; }
  std::size_t size() const { return voxels.size(); }
  std::size_t segment_begin(std::size_t s) const { return starts[s]; }
  std::size_t segment_length(std::size_t s) const { return starts[s + 1] - starts[s]; }
  auto segment(std::size_t s) const {
    return observations.middleRows(static_cast<Eigen::Index>(starts[s]),
                                   static_cast<Eigen::Index>(segment_length(s)));
  }

  SequenceStats stats() const;

  // Same segmentation, different columns.
  SequencedData with_observations(Matrix obs) const;
};

struct SequenceOptions {
  std::optional<int> order;                             // default: covering order
  std::optional<std::array<std::int64_t, 3>> offset;    // default: centred
};

// Resolved placement of a volume inside the curve's cube.
struct CubePlacement {
  HilbertOrder order;
  std::array<std::int64_t, 3> offset;
};
CubePlacement resolve_placement(const std::array<std::int64_t, 3>& dims, const SequenceOptions& options);

// Walks the curve over the masked voxels. Consecutive masked voxels in curve
// order share a segment iff they are 6-neighbours on the lattice; otherwise
// a breaking point starts a new segment. `channels` selects the observation
// columns (may be empty, leaving a zero-column table).
SequencedData sequence_volume(const Volume& volume, std::span<const std::string> channels,
                              const SequenceOptions& options = {});

// Appends segments of several heads; voxel ids keep their per-head values.
SequencedData concatenate(std::span<const SequencedData> parts);

}  // namespace pseudoct
