#pragma once

// Checkpoint format, bit-exact:
//   magic "TSSM"
//   u32 little-endian format version (currently 1)
//   u32 parameter-group count
//   per group: u32 name length, UTF-8 name, u32 rank, u32 dims each,
//              raw float32 little-endian payload
// Round trips are byte-identical.

#include <filesystem>
#include <vector>

#include "tssm/model.hpp"

namespace tssm {

inline constexpr char kCheckpointMagic[4] = {'T', 'S', 'S', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace tssm
