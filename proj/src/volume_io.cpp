#include "pseudoct/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pseudoct/errors.hpp"

namespace pseudoct {

namespace {

using nlohmann::json;

constexpr const char* kDtype = "f32le";

std::string coord_string(const std::array<std::int64_t, 3>& c) {
  std::ostringstream os;
  os << '(' << c[0] << ',' << c[1] << ',' << c[2] << ')';
  return os.str();
}

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

VolumeHeader parse_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open volume header " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed volume header " + path.string() + ": " + e.what());
  }
  const std::set<std::string> expected{"dims", "channels", "dtype", "voxel_size_mm"};
  if (!j.is_object()) throw DataError("malformed volume header " + path.string() + ": not an object");
  for (const auto& [key, _] : j.items()) {
    if (!expected.contains(key))
      throw DataError("malformed volume header " + path.string() + ": unknown field '" + key + "'");
  }
  for (const auto& key : expected) {
    if (!j.contains(key))
      throw DataError("malformed volume header " + path.string() + ": missing field '" + key + "'");
  }
  VolumeHeader h;
  try {
    if (j.at("dtype").get<std::string>() != kDtype)
      throw DataError("malformed volume header " + path.string() + ": dtype must be \"f32le\"");
    const auto& dims = j.at("dims");
    const auto& size = j.at("voxel_size_mm");
    if (!dims.is_array() || dims.size() != 3 || !size.is_array() || size.size() != 3)
      throw DataError("malformed volume header " + path.string() + ": dims and voxel_size_mm need 3 entries");
    for (int a = 0; a < 3; ++a) {
      if (!dims[a].is_number_integer())
        throw DataError("malformed volume header " + path.string() + ": dims must be integers");
      h.dims[a] = dims[a].get<std::int64_t>();
      h.voxel_size_mm[a] = size[a].get<double>();
    }
    h.channels = j.at("channels").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError("malformed volume header " + path.string() + ": " + e.what());
  }
  h.validate();
  return h;
}

}  // namespace

std::optional<std::size_t> VolumeHeader::channel_index(const std::string& name) const {
  auto it = std::find(channels.begin(), channels.end(), name);
  if (it == channels.end()) return std::nullopt;
  return static_cast<std::size_t>(it - channels.begin());
}

void VolumeHeader::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw DataError("volume dims must be >= 1, got " + coord_string(dims));
    if (!(voxel_size_mm[a] > 0.0) || !std::isfinite(voxel_size_mm[a]))
      throw DataError("voxel_size_mm must be positive and finite");
  }
  if (channels.empty()) throw DataError("volume must have at least one channel");
  std::set<std::string> seen;
  for (const auto& c : channels) {
    if (c.empty()) throw DataError("channel names must be non-empty");
    if (!seen.insert(c).second) throw DataError("duplicate channel name '" + c + "'");
  }
}

Volume::Volume(VolumeHeader header, std::vector<float> data)
    : header_(std::move(header)), data_(std::move(data)) {
  header_.validate();
  if (data_.size() * sizeof(float) != header_.payload_bytes()) {
    throw DataError("payload size mismatch: header declares " + std::to_string(header_.payload_bytes()) +
                    " bytes, got " + std::to_string(data_.size() * sizeof(float)));
  }
  mask_index_ = header_.channel_index(kMaskChannel);
}

std::span<const float> Volume::channel(std::size_t c) const {
  const auto n = static_cast<std::size_t>(voxel_count());
  return std::span<const float>(data_).subspan(c * n, n);
}

std::span<float> Volume::channel(std::size_t c) {
  const auto n = static_cast<std::size_t>(voxel_count());
  return std::span<float>(data_).subspan(c * n, n);
}

std::span<const float> Volume::channel(const std::string& name) const {
  const auto idx = header_.channel_index(name);
  if (!idx) throw DataError("volume has no channel '" + name + "'");
  return channel(*idx);
}

bool Volume::inside(VoxelId v) const {
  if (!mask_index_) return true;
  return channel(*mask_index_)[static_cast<std::size_t>(v)] == 1.0f;
}

std::vector<VoxelId> Volume::masked_voxels() const {
  std::vector<VoxelId> out;
  const auto n = voxel_count();
  for (VoxelId v = 0; v < n; ++v) {
    if (inside(v)) out.push_back(v);
  }
  return out;
}

void Volume::validate() const {
  const auto n = voxel_count();
  if (mask_index_) {
    const auto mask = channel(*mask_index_);
    for (VoxelId v = 0; v < n; ++v) {
      const float m = mask[static_cast<std::size_t>(v)];
      if (m != 0.0f && m != 1.0f) {
        std::ostringstream os;
        os << "non-binary mask value " << m << " at voxel " << coord_string(coords(v));
        throw DataError(os.str());
      }
    }
  }
  for (std::size_t c = 0; c < header_.channels.size(); ++c) {
    if (mask_index_ && c == *mask_index_) continue;
    const auto values = channel(c);
    for (VoxelId v = 0; v < n; ++v) {
      if (!inside(v)) continue;
      const float x = values[static_cast<std::size_t>(v)];
      if (!std::isfinite(x)) {
        const auto byte = (c * static_cast<std::size_t>(n) + static_cast<std::size_t>(v)) * sizeof(float);
        throw DataError("non-finite value in channel '" + header_.channels[c] + "' at voxel " +
                        coord_string(coords(v)) + " (payload byte " + std::to_string(byte) + ")");
      }
    }
  }
}

VolumePaths volume_paths(const std::filesystem::path& path) {
  auto stem = path;
  if (stem.extension() == ".json" || stem.extension() == ".raw") stem.replace_extension();
  auto header = stem;
  header += ".json";
  auto payload = stem;
  payload += ".raw";
  return {header, payload};
}

Volume load_volume(const std::filesystem::path& path) {
  const auto paths = volume_paths(path);
  VolumeHeader header = parse_header(paths.header);

  std::ifstream in(paths.payload, std::ios::binary);
  if (!in) throw DataError("cannot open volume payload " + paths.payload.string());
  in.seekg(0, std::ios::end);
  const auto actual = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  if (actual != header.payload_bytes()) {
    throw DataError("payload size mismatch in " + paths.payload.string() + ": header declares " +
                    std::to_string(header.payload_bytes()) + " bytes, file has " + std::to_string(actual) +
                    " (first missing/extra byte at offset " +
                    std::to_string(std::min(actual, header.payload_bytes())) + ")");
  }
  std::vector<float> data(header.payload_bytes() / sizeof(float));
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(actual));
  if (!in) throw DataError("failed reading payload " + paths.payload.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& f : data) f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
  }
  Volume volume(std::move(header), std::move(data));
  volume.validate();
  return volume;
}

void save_volume(const Volume& volume, const std::filesystem::path& path) {
  volume.validate();
  const auto paths = volume_paths(path);
  const auto& h = volume.header();
  json j;
  j["dims"] = h.dims;
  j["channels"] = h.channels;
  j["dtype"] = kDtype;
  j["voxel_size_mm"] = h.voxel_size_mm;

  std::ofstream header_out(paths.header);
  if (!header_out) throw DataError("cannot write volume header " + paths.header.string());
  header_out << j.dump(2) << '\n';
  if (!header_out) throw DataError("failed writing volume header " + paths.header.string());

  std::ofstream payload_out(paths.payload, std::ios::binary);
  if (!payload_out) throw DataError("cannot write volume payload " + paths.payload.string());
  const auto data = volume.data();
  if constexpr (std::endian::native == std::endian::big) {
    std::vector<std::uint32_t> swapped(data.size());
    std::transform(data.begin(), data.end(), swapped.begin(),
                   [](float f) { return byteswap32(std::bit_cast<std::uint32_t>(f)); });
    payload_out.write(reinterpret_cast<const char*>(swapped.data()),
                      static_cast<std::streamsize>(swapped.size() * sizeof(float)));
  } else {
    payload_out.write(reinterpret_cast<const char*>(data.data()),
                      static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  if (!payload_out) throw DataError("failed writing volume payload " + paths.payload.string());
}

Matrix gather_channels(const Volume& volume, std::span<const VoxelId> voxels,
                       std::span<const std::string> channels) {
  Matrix out(static_cast<Eigen::Index>(voxels.size()), static_cast<Eigen::Index>(channels.size()));
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto values = volume.channel(channels[c]);
    for (std::size_t i = 0; i < voxels.size(); ++i) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
          values[static_cast<std::size_t>(voxels[i])];
    }
  }
  return out;
}

void require_channels(const VolumeHeader& header, std::span<const std::string> names) {
  std::vector<std::string> missing;
  for (const auto& c : names) {
    if (!header.channel_index(c)) missing.push_back(c);
  }
  if (missing.empty()) return;
  std::string want, have;
  for (const auto& m : missing) want += (want.empty() ? "" : ", ") + m;
  for (const auto& c : header.channels) have += (have.empty() ? "" : ", ") + c;
  throw DataError("volume is missing channel(s): " + want + " (volume has: " + have + ")");
}

ChannelSelection ChannelSelection::resolved(const VolumeHeader& header) const {
  ChannelSelection out = *this;
  if (out.covariates.empty()) {
    for (const auto& c : header.channels) {
      if (c != kMaskChannel && c != target) out.covariates.push_back(c);
    }
  }
  require_channels(header, out.joint());
  return out;
}

std::vector<std::string> ChannelSelection::joint() const {
  std::vector<std::string> out{target};
  out.insert(out.end(), covariates.begin(), covariates.end());
  return out;
}

}  // namespace pseudoct
