#pragma once

// Packed deployment format for NxM-compliant tensors.
//
// On disk (little-endian):
//   "NXMC0001" | u32 n | u32 m | u32 rank | u64 dims[rank]
//   then per group, row-major: m fp64 values (ascending position) followed by
//   m position indices packed LSB-first at ceil(log2 n) bits each, padded to
//   a byte boundary.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nxm/sparsity.hpp"
#include "nxm/tensor.hpp"

namespace nxm {

struct CompressedNxM {
  SparsityPattern pattern;
  Shape shape;
  /// m values per group, ascending intra-group position.
  std::vector<double> values;
  /// Intra-group position of each value (unpacked).
  std::vector<std::uint8_t> indices;

  std::size_t group_count() const { return shape_numel(shape) / pattern.n; }
  bool operator==(const CompressedNxM&) const = default;
};

/// Throws std::invalid_argument if `w` is not compliant with `pattern`.
CompressedNxM compress(const Tensor& w, const SparsityPattern& pattern);
Tensor decompress(const CompressedNxM& c);

/// Bytes of packed index data per group.
std::size_t index_bytes_per_group(const SparsityPattern& pattern);
/// Exact size of the serialized form.
std::size_t serialized_size(const SparsityPattern& pattern, const Shape& shape);

std::vector<std::uint8_t> serialize(const CompressedNxM& c);
/// Throws io::FormatError on malformed input.
CompressedNxM deserialize(std::span<const std::uint8_t> bytes);

void save_compressed(const std::filesystem::path& path, const CompressedNxM& c);
CompressedNxM load_compressed(const std::filesystem::path& path);

}  // namespace nxm
