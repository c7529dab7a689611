#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nxm/tensor.hpp"

namespace nxm {

/// Keep at most `m` nonzeros in every contiguous group of `n` weights along
/// the last (input-feature) dimension.
struct SparsityPattern {
  std::uint32_t n = 4;
  std::uint32_t m = 2;

  SparsityPattern() = default;
  /// Throws std::invalid_argument unless 0 < m <= n.
  SparsityPattern(std::uint32_t group, std::uint32_t keep);

  /// Parses "N:M", e.g. "4:2".
  static SparsityPattern parse(const std::string& text);
  std::string to_string() const;

  /// Bits needed to address a position inside a group: ceil(log2 n).
  unsigned index_bits() const;

  auto operator<=>(const SparsityPattern&) const = default;
};

/// Boolean retained-position mask. NxM masks carry their pattern; masks
/// produced by unstructured selection leave it empty.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> bits;
  std::optional<SparsityPattern> pattern;

  std::size_t size() const { return bits.size(); }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

/// Throws ShapeError when the last dimension of `shape` is not a multiple of
/// pattern.n.
void require_divisible(const Shape& shape, const SparsityPattern& pattern);

/// Euclidean projection onto the NxM set: the m largest magnitudes of every
/// group survive unmodified, everything else becomes exactly 0.0. Equal
/// magnitudes resolve to the lower position.
Tensor project_nxm(const Tensor& w, const SparsityPattern& pattern);

/// Positions project_nxm retains.
Mask extract_mask(const Tensor& w, const SparsityPattern& pattern);

/// True iff every group holds at most m nonzeros.
bool check_compliance(const Tensor& w, const SparsityPattern& pattern);

/// Copy of `w` with unmasked positions set to 0.0.
Tensor apply_mask(const Tensor& w, const Mask& mask);

}  // namespace nxm
