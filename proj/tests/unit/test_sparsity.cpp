#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "nxm/binary_io.hpp"
#include "nxm/checkpoint.hpp"
#include "nxm/compressed.hpp"
#include "nxm/sparsity.hpp"

using namespace nxm;

namespace {

// Exhaustive search over all m-subsets of every group: the retained set is the
// one with the largest sum of squares, lexicographically smallest on ties.
Tensor brute_force_projection(const Tensor& w, std::uint32_t n, std::uint32_t m) {
  Tensor out(w.shape(), 0.0);
  for (std::size_t g = 0; g < w.numel() / n; ++g) {
    std::uint32_t best = 0;
    double best_energy = -1.0;
    for (std::uint32_t subset = 0; subset < (1u << n); ++subset) {
      if (static_cast<std::uint32_t>(std::popcount(subset)) != m) continue;
      double energy = 0.0;
      for (std::uint32_t i = 0; i < n; ++i)
        if (subset & (1u << i)) energy += w[g * n + i] * w[g * n + i];
      // Reversed bit order makes numerically larger bitmasks of the low bits
      // the lexicographically smaller index lists.
      auto rank = [n](std::uint32_t s) {
        std::uint32_t r = 0;
        for (std::uint32_t i = 0; i < n; ++i)
          if (s & (1u << i)) r |= 1u << (n - 1 - i);
        return r;
      };
      if (energy > best_energy || (energy == best_energy && rank(subset) > rank(best))) {
        best = subset;
        best_energy = energy;
      }
    }
    for (std::uint32_t i = 0; i < n; ++i)
      if (best & (1u << i)) out[g * n + i] = w[g * n + i];
  }
  return out;
}

// Values on a coarse grid so ties and zeros are frequent.
Tensor tie_heavy(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_int_distribution<int> d(-3, 3);
  for (auto& v : t.values()) v = 0.5 * d(rng);
  return t;
}

}  // namespace

TEST_CASE("pattern parsing") {
  CHECK(SparsityPattern::parse("4:2") == SparsityPattern(4, 2));
  CHECK(SparsityPattern::parse("8:4").to_string() == "8:4");
  CHECK(SparsityPattern(4, 2).index_bits() == 2);
  CHECK(SparsityPattern(8, 4).index_bits() == 3);
  CHECK(SparsityPattern(16, 1).index_bits() == 4);
  CHECK_THROWS_AS(SparsityPattern::parse("4-2"), std::invalid_argument);
  CHECK_THROWS_AS(SparsityPattern::parse("4:5"), std::invalid_argument);
  CHECK_THROWS_AS(SparsityPattern::parse("4:0"), std::invalid_argument);
  CHECK_THROWS_AS(SparsityPattern::parse("x:2"), std::invalid_argument);
}

TEST_CASE("projection matches exhaustive search") {
  std::mt19937_64 rng(123);
  for (auto pattern : {SparsityPattern(4, 2), SparsityPattern(8, 4), SparsityPattern(4, 1), SparsityPattern(8, 2)}) {
    for (int trial = 0; trial < 60; ++trial) {
      const Tensor w = trial % 2 ? testing::random_tensor({6, pattern.n * 3}, rng) : tie_heavy({6, pattern.n * 3}, rng);
      const Tensor p = project_nxm(w, pattern);
      CHECK(testing::bitwise_equal(p, brute_force_projection(w, pattern.n, pattern.m)));
      CHECK(check_compliance(p, pattern));
      CHECK(testing::bitwise_equal(project_nxm(p, pattern), p));
    }
  }
}

TEST_CASE("projection details") {
  SparsityPattern p(4, 2);
  CHECK(project_nxm(Tensor::from({1, 4}, {1, 1, 1, 1}), p) == Tensor::from({1, 4}, {1, 1, 0, 0}));
  CHECK(project_nxm(Tensor::from({1, 4}, {-3, 1, 2, -2}), p) == Tensor::from({1, 4}, {-3, 0, 2, 0}));
  CHECK(project_nxm(Tensor::from({1, 4}, {0, 0, 0, 5}), p) == Tensor::from({1, 4}, {0, 0, 0, 5}));
  // Groups run along the last dimension, never across rows.
  const Tensor w = Tensor::from({2, 4}, {9, 9, 9, 9, 1, 2, 3, 4});
  CHECK(project_nxm(w, p) == Tensor::from({2, 4}, {9, 9, 0, 0, 0, 0, 3, 4}));
  const Mask mask = extract_mask(w, p);
  CHECK(mask.count() == 4);
  CHECK(mask.pattern == p);
  CHECK(apply_mask(w, mask) == project_nxm(w, p));
  // Rank 3 groups along the innermost axis.
  std::mt19937_64 rng(5);
  const Tensor r3 = testing::random_tensor({2, 3, 8}, rng);
  CHECK(project_nxm(r3, p) == project_nxm(r3.reshaped({6, 8}), p).reshaped({2, 3, 8}));

  CHECK_THROWS_AS(project_nxm(Tensor({3, 6}), p), ShapeError);
  Tensor bad({1, 4}, 1.0);
  bad[2] = NAN;
  CHECK_THROWS_AS(project_nxm(bad, p), NumericError);
  CHECK_THROWS_AS(apply_mask(Tensor({2, 4}), extract_mask(Tensor({1, 4}), p)), ShapeError);
}

TEST_CASE("compliance checks") {
  SparsityPattern p(4, 2);
  CHECK(check_compliance(Tensor::from({1, 8}, {1, 0, 2, 0, 0, 0, 0, 0}), p));
  CHECK_FALSE(check_compliance(Tensor::from({1, 8}, {1, 0, 2, 0, 1, 1, 1, 0}), p));
  CHECK(check_compliance(Tensor({2, 4}, 0.0), p));
  CHECK_THROWS_AS(check_compliance(Tensor({2, 5}), p), ShapeError);
}

TEST_CASE("compressed size and layout") {
  SparsityPattern p(4, 2);
  CHECK(index_bytes_per_group(p) == 1);
  CHECK(index_bytes_per_group(SparsityPattern(8, 4)) == 2);
  CHECK(index_bytes_per_group(SparsityPattern(16, 8)) == 4);
  CHECK(serialized_size(p, {32, 32}) == 4388u);

  std::mt19937_64 rng(7);
  const Tensor w = project_nxm(testing::random_tensor({32, 32}, rng), p);
  const auto bytes = serialize(compress(w, p));
  CHECK(bytes.size() == 4388u);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "NXMC0001");
  CHECK(bytes[8] == 4);
  CHECK(bytes[12] == 2);
  CHECK(bytes[16] == 2);

  // First group: values then packed indices LSB-first.
  const Tensor g = Tensor::from({1, 4}, {0.0, 1.5, 0.0, -2.0});
  const auto one = serialize(compress(g, p));
  REQUIRE(one.size() == 8 + 12 + 16 + 17);
  std::uint64_t raw = 0;
  for (int i = 0; i < 8; ++i) raw |= std::uint64_t{one[36 + i]} << (8 * i);
  CHECK(std::bit_cast<double>(raw) == 1.5);
  CHECK(one[36 + 16] == (1u | (3u << 2)));
}

TEST_CASE("compressed round trips") {
  std::mt19937_64 rng(11);
  for (auto p : {SparsityPattern(4, 2), SparsityPattern(8, 4), SparsityPattern(8, 3), SparsityPattern(2, 1)}) {
    for (int t = 0; t < 20; ++t) {
      Tensor w = t % 3 ? testing::random_tensor({5, p.n * 4}, rng) : tie_heavy({5, p.n * 4}, rng);
      w = project_nxm(w, p);
      const CompressedNxM c = compress(w, p);
      CHECK(c.values.size() == c.group_count() * p.m);
      const auto bytes = serialize(c);
      CHECK(bytes.size() == serialized_size(p, w.shape()));
      CHECK(testing::bitwise_equal(decompress(deserialize(bytes)), w));
    }
  }
  const auto path = std::filesystem::temp_directory_path() / "nxm_unit_roundtrip.nxmc";
  const Tensor w = project_nxm(testing::random_tensor({4, 16}, rng), SparsityPattern(4, 2));
  save_compressed(path, compress(w, SparsityPattern(4, 2)));
  CHECK(decompress(load_compressed(path)) == w);
  std::filesystem::remove(path);
}

TEST_CASE("compressed input validation") {
  SparsityPattern p(4, 2);
  CHECK_THROWS_AS(compress(Tensor::from({1, 4}, {1, 2, 3, 0}), p), std::invalid_argument);
  std::mt19937_64 rng(3);
  const auto good = serialize(compress(project_nxm(testing::random_tensor({4, 8}, rng), p), p));

  auto corrupt = [&](auto mutate) {
    auto b = good;
    mutate(b);
    return b;
  };
  CHECK_THROWS_AS(deserialize(corrupt([](auto& b) { b[0] = 'X'; })), io::FormatError);
  CHECK_THROWS_AS(deserialize(corrupt([](auto& b) { b.pop_back(); })), io::FormatError);
  CHECK_THROWS_AS(deserialize(corrupt([](auto& b) { b.push_back(0); })), io::FormatError);
  CHECK_THROWS_AS(deserialize(corrupt([](auto& b) { b[12] = 5; })), io::FormatError);
  CHECK_THROWS_AS(deserialize(corrupt([](auto& b) { b[8] = 0; })), io::FormatError);
  CHECK_THROWS_AS(deserialize(corrupt([](auto& b) { b[16] = 0; })), io::FormatError);
  // Duplicate index inside the first group.
  CHECK_THROWS_AS(deserialize(corrupt([](auto& b) { b[8 + 12 + 16 + 16] = 0; })), io::FormatError);
  CHECK_THROWS_AS(deserialize(std::vector<std::uint8_t>{}), io::FormatError);
}

TEST_CASE("checkpoint round trip and validation") {
  std::mt19937_64 rng(21);
  ParameterSet p;
  p.add("a.weight", testing::random_tensor({3, 4}, rng));
  p.add("a.bias", testing::random_tensor({3}, rng));
  p.add("cube", testing::random_tensor({2, 2, 2}, rng));
  const auto bytes = serialize_checkpoint(p);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "NXMW0001");
  CHECK(deserialize_checkpoint(bytes) == p);

  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(deserialize_checkpoint(cut), io::FormatError);
  auto extra = bytes;
  extra.push_back(1);
  CHECK_THROWS_AS(deserialize_checkpoint(extra), io::FormatError);
  auto magic = bytes;
  magic[7] = '2';
  CHECK_THROWS_AS(deserialize_checkpoint(magic), io::FormatError);

  const auto path = std::filesystem::temp_directory_path() / "nxm_unit_ckpt.nxmw";
  save_checkpoint(path, p);
  ParameterSet q;
  q.add("a.weight", Tensor({3, 4}));
  q.add("a.bias", Tensor({3}));
  q.add("cube", Tensor({2, 2, 2}));
  assign_parameters(q, load_checkpoint(path));
  CHECK(q == p);
  ParameterSet wrong;
  wrong.add("a.weight", Tensor({4, 3}));
  CHECK_THROWS_AS(assign_parameters(wrong, p), std::invalid_argument);
  std::filesystem::remove(path);
}
