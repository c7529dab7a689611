#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "nxm/kernels.hpp"
#include "nxm/tensor.hpp"

using namespace nxm;
namespace k = nxm::kernels;

TEST_CASE("tensor construction and shape checks") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 1.5);
  CHECK_THROWS_AS(Tensor(Shape{}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>(3)), ShapeError);
  CHECK_THROWS_AS(t.item(), ShapeError);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
}

TEST_CASE("finiteness guard") {
  Tensor t({3}, 0.0);
  CHECK(t.all_finite());
  t[1] = std::nan("");
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(t.require_finite("probe"), NumericError);
  t[1] = INFINITY;
  CHECK_THROWS_AS(t.require_finite("probe"), NumericError);
}

TEST_CASE("norms against a hand computation") {
  const Tensor a = Tensor::from({2, 2}, {3.0, 0.0, 0.0, 4.0});
  const Tensor b = Tensor::from({2, 2}, {0.0, 0.0, 0.0, 4.0});
  CHECK(squared_norm(a) == 25.0);
  CHECK(frobenius_norm(a) == 5.0);
  CHECK(distance(a, b) == 3.0);
  CHECK_THROWS_AS(distance(a, Tensor({4})), ShapeError);
}

namespace {

// Plain triple loop in textbook index form, independent of both kernel sets.
std::vector<double> oracle_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                  std::size_t kk, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < kk; ++t) s += a[i * kk + t] * b[t * n + j];
      c[i * n + j] = s;
    }
  return c;
}

std::vector<double> transpose(const std::vector<double>& x, std::size_t r, std::size_t c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return out;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_CASE("matmul kernels: serial and parallel agree bitwise with the oracle") {
  std::mt19937_64 rng(11);
  // Small shapes run serially inside the OpenMP kernels; the large ones cross
  // the parallel threshold.
  const std::vector<std::array<std::size_t, 3>> shapes{{1, 1, 1}, {3, 5, 2}, {17, 9, 13}, {128, 32, 96}, {256, 128, 32}};
  for (const auto& [m, kk, n] : shapes) {
    CAPTURE(m);
    CAPTURE(kk);
    CAPTURE(n);
    const auto a = random_vec(m * kk, rng);
    const auto b = random_vec(kk * n, rng);
    const auto expect = oracle_matmul(a, b, m, kk, n);

    std::vector<double> c1(m * n), c2(m * n);
    k::serial::matmul_nn(a, b, c1, m, kk, n);
    k::parallel::matmul_nn(a, b, c2, m, kk, n);
    CHECK(c1 == expect);
    CHECK(c2 == expect);

    const auto bt = transpose(b, kk, n);  // [n, k]
    k::serial::matmul_nt(a, bt, c1, m, kk, n);
    k::parallel::matmul_nt(a, bt, c2, m, kk, n);
    CHECK(c1 == expect);
    CHECK(c2 == expect);

    const auto at = transpose(a, m, kk);  // [k, m]
    k::serial::matmul_tn(at, b, c1, m, kk, n);
    k::parallel::matmul_tn(at, b, c2, m, kk, n);
    CHECK(c1 == expect);
    CHECK(c2 == expect);
  }
}

TEST_CASE("nxm_keep: serial sort and parallel rank counting agree, ties go low") {
  std::mt19937_64 rng(5);
  for (auto [n, m] : std::vector<std::pair<std::size_t, std::size_t>>{{4, 2}, {8, 4}, {4, 1}, {16, 3}, {2, 2}}) {
    const std::size_t count = n * 4096;
    auto w = random_vec(count, rng);
    // Inject exact ties and zeros.
    for (std::size_t i = 0; i < count; i += 7) w[i] = (i % 3 == 0) ? 0.0 : -w[i + 1 < count ? i + 1 : i];
    std::vector<std::uint8_t> a(count), b(count);
    k::serial::nxm_keep(w, a, n, m);
    k::parallel::nxm_keep(w, b, n, m);
    CHECK(a == b);
    for (std::size_t g = 0; g < count / n; ++g) {
      std::size_t kept = 0;
      for (std::size_t i = 0; i < n; ++i) kept += a[g * n + i];
      REQUIRE(kept == m);
    }
  }
  const std::vector<double> ties{1.0, -1.0, 1.0, 1.0};
  std::vector<std::uint8_t> keep(4);
  k::parallel::nxm_keep(ties, keep, 4, 2);
  CHECK(keep == std::vector<std::uint8_t>{1, 1, 0, 0});
}

TEST_CASE("attention kernels: serial and parallel agree bitwise") {
  std::mt19937_64 rng(3);
  for (auto dims : {k::AttentionDims{1, 1, 1, 1}, k::AttentionDims{2, 4, 2, 16}, k::AttentionDims{64, 4, 2, 16},
                    k::AttentionDims{8, 7, 4, 3}}) {
    const std::size_t rows = dims.batch * dims.seq, w = dims.width();
    const auto q = random_vec(rows * w, rng), kk = random_vec(rows * w, rng), v = random_vec(rows * w, rng);
    std::vector<double> o1(rows * w), o2(rows * w), p1(dims.prob_count()), p2(dims.prob_count());
    k::serial::attention_forward(q, kk, v, o1, p1, dims);
    k::parallel::attention_forward(q, kk, v, o2, p2, dims);
    CHECK(o1 == o2);
    CHECK(p1 == p2);
    // Probabilities form distributions over keys.
    for (std::size_t r = 0; r < dims.prob_count() / dims.seq; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < dims.seq; ++j) s += p1[r * dims.seq + j];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto go = random_vec(rows * w, rng);
    std::vector<double> gq1(rows * w), gk1(rows * w), gv1(rows * w), gq2(rows * w), gk2(rows * w), gv2(rows * w);
    k::serial::attention_backward(q, kk, v, p1, go, gq1, gk1, gv1, dims);
    k::parallel::attention_backward(q, kk, v, p2, go, gq2, gk2, gv2, dims);
    CHECK(gq1 == gq2);
    CHECK(gk1 == gk2);
    CHECK(gv1 == gv2);
  }
}
