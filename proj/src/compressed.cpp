#include "nxm/compressed.hpp"

#include <cstring>
#include <stdexcept>

#include "nxm/binary_io.hpp"

namespace nxm {

namespace {
constexpr char kMagic[] = "NXMC0001";
constexpr std::size_t kMagicLen = 8;
}  // namespace

CompressedNxM compress(const Tensor& w, const SparsityPattern& pattern) {
  if (pattern.n > 256) throw std::invalid_argument("group sizes above 256 are not supported");
  if (!check_compliance(w, pattern))
    throw std::invalid_argument("cannot compress: tensor violates " + pattern.to_string());
  // For a compliant group every nonzero is among the top-m magnitudes, so the
  // projection mask selects all of them (padded with the lowest zero slots).
  const Mask mask = extract_mask(w, pattern);
  CompressedNxM c{pattern, w.shape(), {}, {}};
  c.values.reserve(c.group_count() * pattern.m);
  c.indices.reserve(c.group_count() * pattern.m);
  for (std::size_t g = 0; g < c.group_count(); ++g)
    for (std::uint32_t i = 0; i < pattern.n; ++i) {
      const std::size_t pos = g * pattern.n + i;
      if (!mask.bits[pos]) continue;
      c.values.push_back(w[pos]);
      c.indices.push_back(static_cast<std::uint8_t>(i));
    }
  return c;
}

Tensor decompress(const CompressedNxM& c) {
  const std::size_t expected = c.group_count() * c.pattern.m;
  if (c.values.size() != expected || c.indices.size() != expected)
    throw std::invalid_argument("compressed tensor has inconsistent value/index counts");
  Tensor out(c.shape, 0.0);
  for (std::size_t g = 0; g < c.group_count(); ++g)
    for (std::uint32_t j = 0; j < c.pattern.m; ++j) {
      const std::size_t slot = g * c.pattern.m + j;
      if (c.indices[slot] >= c.pattern.n)
        throw std::invalid_argument("compressed index out of range");
      out[g * c.pattern.n + c.indices[slot]] = c.values[slot];
    }
  return out;
}

std::size_t index_bytes_per_group(const SparsityPattern& pattern) {
  return (static_cast<std::size_t>(pattern.m) * pattern.index_bits() + 7) / 8;
}

std::size_t serialized_size(const SparsityPattern& pattern, const Shape& shape) {
  const std::size_t groups = shape_numel(shape) / pattern.n;
  return kMagicLen + 3 * sizeof(std::uint32_t) + shape.size() * sizeof(std::uint64_t) +
         groups * (pattern.m * sizeof(double) + index_bytes_per_group(pattern));
}

std::vector<std::uint8_t> serialize(const CompressedNxM& c) {
  io::ByteWriter w;
  w.put_string(std::string(kMagic, kMagicLen));
  w.put_uint<std::uint32_t>(c.pattern.n);
  w.put_uint<std::uint32_t>(c.pattern.m);
  w.put_uint<std::uint32_t>(static_cast<std::uint32_t>(c.shape.size()));
  for (auto d : c.shape) w.put_uint<std::uint64_t>(d);

  const unsigned bits = c.pattern.index_bits();
  std::vector<std::uint8_t> packed(index_bytes_per_group(c.pattern));
  for (std::size_t g = 0; g < c.group_count(); ++g) {
    for (std::uint32_t j = 0; j < c.pattern.m; ++j) w.put_f64(c.values[g * c.pattern.m + j]);
    std::fill(packed.begin(), packed.end(), 0);
    for (std::uint32_t j = 0; j < c.pattern.m; ++j) {
      const unsigned index = c.indices[g * c.pattern.m + j];
      for (unsigned b = 0; b < bits; ++b) {
        const std::size_t bit = static_cast<std::size_t>(j) * bits + b;
        if ((index >> b) & 1u) packed[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
      }
    }
    w.put_bytes(packed);
  }
  return std::move(w.bytes());
}

CompressedNxM deserialize(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.get_string(kMagicLen) != std::string(kMagic, kMagicLen))
    throw io::FormatError("not a compressed NxM tensor (bad magic)");
  const auto n = r.get_uint<std::uint32_t>();
  const auto m = r.get_uint<std::uint32_t>();
  if (n == 0 || m == 0 || m > n || n > 256) throw io::FormatError("invalid pattern in header");
  CompressedNxM c;
  c.pattern = SparsityPattern(n, m);
  const auto rank = r.get_uint<std::uint32_t>();
  if (rank == 0) throw io::FormatError("rank must be positive");
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = r.get_uint<std::uint64_t>();
    if (d == 0) throw io::FormatError("zero dimension");
    c.shape.push_back(static_cast<std::size_t>(d));
  }
  if (c.shape.back() % n != 0) throw io::FormatError("last dimension not divisible by group size");
  if (bytes.size() != serialized_size(c.pattern, c.shape))
    throw io::FormatError("payload size does not match header");

  const unsigned bits = c.pattern.index_bits();
  const std::size_t index_bytes = index_bytes_per_group(c.pattern);
  c.values.reserve(c.group_count() * m);
  c.indices.reserve(c.group_count() * m);
  for (std::size_t g = 0; g < c.group_count(); ++g) {
    for (std::uint32_t j = 0; j < m; ++j) c.values.push_back(r.get_f64());
    auto packed = r.get_bytes(index_bytes);
    int previous = -1;
    for (std::uint32_t j = 0; j < m; ++j) {
      unsigned index = 0;
      for (unsigned b = 0; b < bits; ++b) {
        const std::size_t bit = static_cast<std::size_t>(j) * bits + b;
        index |= ((packed[bit / 8] >> (bit % 8)) & 1u) << b;
      }
      if (index >= n || static_cast<int>(index) <= previous)
        throw io::FormatError("group indices must be strictly ascending and below n");
      previous = static_cast<int>(index);
      c.indices.push_back(static_cast<std::uint8_t>(index));
    }
  }
  return c;
}

void save_compressed(const std::filesystem::path& path, const CompressedNxM& c) {
  io::write_file(path, serialize(c));
}

CompressedNxM load_compressed(const std::filesystem::path& path) {
  return deserialize(io::read_file(path));
}

}  // namespace nxm
