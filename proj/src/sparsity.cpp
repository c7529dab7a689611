#include "nxm/sparsity.hpp"

#include <charconv>
#include <stdexcept>

#include "nxm/kernels.hpp"

namespace nxm {

SparsityPattern::SparsityPattern(std::uint32_t group, std::uint32_t keep) : n(group), m(keep) {
  if (n == 0 || m == 0 || m > n)
    throw std::invalid_argument("invalid sparsity pattern " + to_string() + ": need 0 < M <= N");
}

SparsityPattern SparsityPattern::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("pattern must look like N:M, got " + text);
  std::uint32_t n = 0, m = 0;
  auto parse_part = [&](std::string_view part, std::uint32_t& out) {
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    if (ec != std::errc() || ptr != part.data() + part.size())
      throw std::invalid_argument("pattern must look like N:M, got " + text);
  };
  std::string_view view(text);
  parse_part(view.substr(0, colon), n);
  parse_part(view.substr(colon + 1), m);
  return SparsityPattern(n, m);
}

std::string SparsityPattern::to_string() const { return std::to_string(n) + ":" + std::to_string(m); }

unsigned SparsityPattern::index_bits() const {
  unsigned bits = 0;
  while ((std::uint64_t{1} << bits) < n) ++bits;
  return bits;
}

std::size_t Mask::count() const {
  std::size_t c = 0;
  for (auto b : bits) c += b ? 1 : 0;
  return c;
}

void require_divisible(const Shape& shape, const SparsityPattern& pattern) {
  if (shape.empty() || shape.back() % pattern.n != 0)
    throw ShapeError("input dimension of " + shape_to_string(shape) +
                     " is not divisible by group size " + std::to_string(pattern.n));
}

Mask extract_mask(const Tensor& w, const SparsityPattern& pattern) {
  require_divisible(w.shape(), pattern);
  w.require_finite("tensor passed to NxM selection");
  Mask mask{w.shape(), std::vector<std::uint8_t>(w.numel()), pattern};
  kernels::parallel::nxm_keep(w.data(), mask.bits, pattern.n, pattern.m);
  return mask;
}

Tensor project_nxm(const Tensor& w, const SparsityPattern& pattern) {
  return apply_mask(w, extract_mask(w, pattern));
}

bool check_compliance(const Tensor& w, const SparsityPattern& pattern) {
  require_divisible(w.shape(), pattern);
  const auto values = w.data();
  for (std::size_t g = 0; g < values.size() / pattern.n; ++g) {
    std::uint32_t nonzero = 0;
    for (std::uint32_t i = 0; i < pattern.n; ++i) nonzero += values[g * pattern.n + i] != 0.0;
    if (nonzero > pattern.m) return false;
  }
  return true;
}

Tensor apply_mask(const Tensor& w, const Mask& mask) {
  if (mask.shape != w.shape())
    throw ShapeError("mask shape " + shape_to_string(mask.shape) + " does not match tensor " +
                     shape_to_string(w.shape()));
  Tensor out(w.shape(), 0.0);
  for (std::size_t i = 0; i < w.numel(); ++i)
    if (mask.bits[i]) out[i] = w[i];
  return out;
}

}  // namespace nxm
