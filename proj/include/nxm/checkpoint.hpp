#pragma once

// Checkpoint layout (little-endian):
//   "NXMW0001" | u32 tensor count
//   per tensor: u16 name length | name bytes | u32 rank | u64 dims[rank] |
//               fp64 payload, row-major

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nxm/autodiff.hpp"

namespace nxm {

std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet& params);
/// Throws io::FormatError on malformed input.
ParameterSet deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params);
ParameterSet load_checkpoint(const std::filesystem::path& path);

/// Copies every tensor of `source` into the same-named slot of `target`.
/// Names and shapes must match exactly.
void assign_parameters(ParameterSet& target, const ParameterSet& source);

}  // namespace nxm
