#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "depthref/io_formats.hpp"
#include "depthref/refine.hpp"

namespace depthref {

// Checkpoint layout (all integers u32 little-endian):
//   "DRCK" | version | tensor count
//   per tensor: name length | UTF-8 name | rank | dims... | float32 LE values
//   CRC32 (0xEDB88320) of everything after the magic and before the CRC.
// The first tensor, "unet.config", holds [levels, base_channels, in_channels,
// leaky_slope], the second, "refine.head", holds 0 (multiplicative) or 1
// (additive).

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const RefineNetwork& net);
RefineNetwork deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const RefineNetwork& net, const std::filesystem::path& path);
/// Throws FormatError on bad magic, CRC mismatch, unsupported version,
/// duplicate or missing tensors.
RefineNetwork load_checkpoint(const std::filesystem::path& path);

}  // namespace depthref
