#include "pseudoct/hilbert.hpp"

#include <algorithm>
#include <cstdlib>
#include <numeric>

#include "pseudoct/errors.hpp"

namespace pseudoct {

namespace {

constexpr int kDims = 3;

// Skilling, "Programming the Hilbert curve" (2004): in-place conversion
// between axis coordinates and the transposed curve index.
void transpose_to_axes(std::array<std::uint32_t, kDims>& x, int bits) {
  const std::uint32_t n = 2u << (bits - 1);
  std::uint32_t t = x[kDims - 1] >> 1;
  for (int i = kDims - 1; i > 0; --i) x[i] ^= x[i - 1];
  x[0] ^= t;
  for (std::uint32_t q = 2; q != n; q <<= 1) {
    const std::uint32_t p = q - 1;
    for (int i = kDims - 1; i >= 0; --i) {
      if (x[i] & q) {
        x[0] ^= p;
      } else {
        t = (x[0] ^ x[i]) & p;
        x[0] ^= t;
        x[i] ^= t;
      }
    }
  }
}

void axes_to_transpose(std::array<std::uint32_t, kDims>& x, int bits) {
  const std::uint32_t m = 1u << (bits - 1);
  for (std::uint32_t q = m; q > 1; q >>= 1) {
    const std::uint32_t p = q - 1;
    for (int i = 0; i < kDims; ++i) {
      if (x[i] & q) {
        x[0] ^= p;
      } else {
        const std::uint32_t t = (x[0] ^ x[i]) & p;
        x[0] ^= t;
        x[i] ^= t;
      }
    }
  }
  for (int i = 1; i < kDims; ++i) x[i] ^= x[i - 1];
  std::uint32_t t = 0;
  for (std::uint32_t q = m; q > 1; q >>= 1) {
    if (x[kDims - 1] & q) t ^= q - 1;
  }
  for (int i = 0; i < kDims; ++i) x[i] ^= t;
}

}  // namespace

HilbertOrder::HilbertOrder(int order) : order_(order) {
  if (order < 1 || order > kMax)
    throw DataError("Hilbert order must be in [1, " + std::to_string(kMax) + "], got " + std::to_string(order));
}

HilbertOrder HilbertOrder::covering(const std::array<std::int64_t, 3>& dims) {
  const auto extent = std::max({dims[0], dims[1], dims[2]});
  int p = 1;
  while ((std::int64_t{1} << p) < extent) ++p;
  return HilbertOrder(p);
}

Coords index_to_coords(HilbertOrder order, std::uint64_t d) {
  if (d >= order.length())
    throw DataError("Hilbert index " + std::to_string(d) + " out of range for order " +
                    std::to_string(order.value()));
  const int bits = order.value();
  std::array<std::uint32_t, kDims> x{0, 0, 0};
  // De-interleave: the most significant bit of each triple goes to x[0].
  for (int b = 0; b < bits; ++b) {
    for (int i = 0; i < kDims; ++i) {
      const int shift = kDims * (bits - 1 - b) + (kDims - 1 - i);
      x[i] = (x[i] << 1) | static_cast<std::uint32_t>((d >> shift) & 1u);
    }
  }
  transpose_to_axes(x, bits);
  return {x[0], x[1], x[2]};
}

std::uint64_t coords_to_index(HilbertOrder order, Coords c) {
  const std::uint32_t side = order.side();
  if (c[0] >= side || c[1] >= side || c[2] >= side)
    throw DataError("coordinates (" + std::to_string(c[0]) + "," + std::to_string(c[1]) + "," +
                    std::to_string(c[2]) + ") outside the 2^" + std::to_string(order.value()) + " cube");
  const int bits = order.value();
  std::array<std::uint32_t, kDims> x{c[0], c[1], c[2]};
  axes_to_transpose(x, bits);
  std::uint64_t d = 0;
  for (int b = bits - 1; b >= 0; --b) {
    for (int i = 0; i < kDims; ++i) d = (d << 1) | ((x[i] >> b) & 1u);
  }
  return d;
}

bool lattice_neighbours(const std::array<std::int64_t, 3>& a, const std::array<std::int64_t, 3>& b) {
  std::int64_t total = 0;
  for (int i = 0; i < 3; ++i) total += std::llabs(a[i] - b[i]);
  return total == 1;
}

SequenceStats SequencedData::stats() const {
  SequenceStats s;
  s.voxels = voxels.size();
  s.segments = segment_count();
  std::size_t two = 0;
  for (std::size_t i = 0; i < s.segments; ++i) {
    const auto len = segment_length(i);
    ++s.length_histogram[len];
    if (len == 1) ++s.singletons;
    s.max_length = std::max(s.max_length, len);
    if (len >= 3) two += len - 2;
  }
  s.two_neighbour_fraction = s.voxels == 0 ? 0.0 : static_cast<double>(two) / static_cast<double>(s.voxels);
  return s;
}

SequencedData SequencedData::with_observations(Matrix obs) const {
  if (static_cast<std::size_t>(obs.rows()) != voxels.size())
    throw DataError("observation rows do not match sequenced voxels");
  SequencedData out = *this;
  out.observations = std::move(obs);
  return out;
}

CubePlacement resolve_placement(const std::array<std::int64_t, 3>& dims, const SequenceOptions& options) {
  const HilbertOrder order = options.order ? HilbertOrder(*options.order) : HilbertOrder::covering(dims);
  const auto side = static_cast<std::int64_t>(order.side());
  std::array<std::int64_t, 3> offset{};
  for (int a = 0; a < 3; ++a) {
    offset[a] = options.offset ? (*options.offset)[a] : (side - dims[a]) / 2;
    if (offset[a] < 0 || offset[a] + dims[a] > side) {
      throw DataError("volume of extent " + std::to_string(dims[a]) + " at offset " + std::to_string(offset[a]) +
                      " does not fit the 2^" + std::to_string(order.value()) + " Hilbert cube along axis " +
                      std::to_string(a));
    }
  }
  return {order, offset};
}

SequencedData sequence_volume(const Volume& volume, std::span<const std::string> channels,
                              const SequenceOptions& options) {
  const auto placement = resolve_placement(volume.dims(), options);

  std::vector<std::pair<std::uint64_t, VoxelId>> keyed;
  for (VoxelId v : volume.masked_voxels()) {
    const auto c = volume.coords(v);
    const Coords cube{static_cast<std::uint32_t>(c[0] + placement.offset[0]),
                      static_cast<std::uint32_t>(c[1] + placement.offset[1]),
                      static_cast<std::uint32_t>(c[2] + placement.offset[2])};
    keyed.emplace_back(coords_to_index(placement.order, cube), v);
  }
  std::sort(keyed.begin(), keyed.end());

  SequencedData out;
  out.hilbert_order = placement.order.value();
  out.offset = placement.offset;
  out.voxels.reserve(keyed.size());
  for (std::size_t i = 0; i < keyed.size(); ++i) {
    const VoxelId v = keyed[i].second;
    // Curve-consecutive voxels are always neighbours; across a gap the exit
    // and entry voxels are joined only if they happen to touch.
    if (i > 0 && !lattice_neighbours(volume.coords(out.voxels.back()), volume.coords(v)))
      out.starts.push_back(i);
    out.voxels.push_back(v);
  }
  if (!keyed.empty()) out.starts.push_back(keyed.size());
  out.observations = gather_channels(volume, out.voxels, channels);
  return out;
}

SequencedData concatenate(std::span<const SequencedData> parts) {
  SequencedData out;
  if (parts.empty()) return out;
  std::size_t rows = 0;
  const auto cols = parts.front().observations.cols();
  for (const auto& p : parts) {
    if (p.observations.cols() != cols) throw DataError("cannot concatenate sequences with different channels");
    rows += p.size();
  }
  out.hilbert_order = parts.front().hilbert_order;
  out.offset = parts.front().offset;
  out.observations.resize(static_cast<Eigen::Index>(rows), cols);
  out.voxels.reserve(rows);
  std::size_t at = 0;
  for (const auto& p : parts) {
    out.observations.middleRows(static_cast<Eigen::Index>(at), static_cast<Eigen::Index>(p.size())) =
        p.observations;
    out.voxels.insert(out.voxels.end(), p.voxels.begin(), p.voxels.end());
    for (std::size_t s = 1; s < p.starts.size(); ++s) out.starts.push_back(at + p.starts[s]);
    at += p.size();
  }
  return out;
}

}  // namespace pseudoct
