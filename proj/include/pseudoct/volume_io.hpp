#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pseudoct/types.hpp"

namespace pseudoct {

inline constexpr const char* kMaskChannel = "mask";

struct VolumeHeader {
  std::array<std::int64_t, 3> dims{1, 1, 1};
  std::vector<std::string> channels;
  std::array<double, 3> voxel_size_mm{1.0, 1.0, 1.0};

  std::int64_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t payload_bytes() const {
    return static_cast<std::size_t>(voxel_count()) * channels.size() * sizeof(float);
  }
  std::optional<std::size_t> channel_index(const std::string& name) const;

  // Throws DataError when dims, channel names, or voxel sizes are invalid.
  void validate() const;

  friend bool operator==(const VolumeHeader&, const VolumeHeader&) = default;
};

// A multi-channel 3D volume. Data are channel-major; within a channel the
// linear voxel id is x + nx * (y + ny * z).
class Volume {
 public:
  Volume() = default;
  Volume(VolumeHeader header, std::vector<float> data);

  const VolumeHeader& header() const { return header_; }
  const std::array<std::int64_t, 3>& dims() const { return header_.dims; }
  std::int64_t voxel_count() const { return header_.voxel_count(); }

  std::span<const float> channel(std::size_t c) const;
  std::span<float> channel(std::size_t c);
  std::span<const float> channel(const std::string& name) const;
  std::span<const float> data() const { return data_; }

  // Mask view. A volume without a "mask" channel is treated as fully inside.
  bool inside(VoxelId v) const;
  std::vector<VoxelId> masked_voxels() const;

  VoxelId voxel_id(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x + header_.dims[0] * (y + header_.dims[1] * z);
  }
  std::array<std::int64_t, 3> coords(VoxelId v) const {
    const auto nx = header_.dims[0], ny = header_.dims[1];
    return {v % nx, (v / nx) % ny, v / (nx * ny)};
  }

  // Checks the mask is exactly {0,1} and that every other channel is finite
  // inside the mask. Throws DataError naming the offending voxel.
  void validate() const;

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  VolumeHeader header_;
  std::vector<float> data_;
  std::optional<std::size_t> mask_index_;
};

// `path` may name the header (`x.json`), the payload (`x.raw`), or the bare
// stem `x`; both files of the pair are derived from it.
struct VolumePaths {
  std::filesystem::path header;
  std::filesystem::path payload;
};
VolumePaths volume_paths(const std::filesystem::path& path);

Volume load_volume(const std::filesystem::path& path);
void save_volume(const Volume& volume, const std::filesystem::path& path);

// Gathers the named channels at the given voxels into an observation table.
Matrix gather_channels(const Volume& volume, std::span<const VoxelId> voxels,
                       std::span<const std::string> channels);

// Throws DataError listing the names the header lacks and the ones it has.
void require_channels(const VolumeHeader& header, std::span<const std::string> names);

// Target channel plus covariates, in (Y, X1..Xm) order.
struct ChannelSelection {
  std::string target = "CT";
  std::vector<std::string> covariates;

  // Fills empty covariates with every channel other than mask and target and
  // checks that all named channels exist.
  ChannelSelection resolved(const VolumeHeader& header) const;
  std::vector<std::string> joint() const;
};

}  // namespace pseudoct
