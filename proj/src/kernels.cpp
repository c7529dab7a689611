#include "nxm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace nxm::kernels {

namespace {

// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

void attention_forward_pair(std::span<const double> q, std::span<const double> k,
                            std::span<const double> v, std::span<double> out,
                            std::span<double> probs, const AttentionDims& d, std::size_t b,
                            std::size_t h) {
  const std::size_t width = d.width();
  const std::size_t row0 = b * d.seq;
  const std::size_t col0 = h * d.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d.head_dim));
  double* p = probs.data() + ((b * d.heads + h) * d.seq) * d.seq;

  for (std::size_t i = 0; i < d.seq; ++i) {
    const double* qi = q.data() + (row0 + i) * width + col0;
    double* pi = p + i * d.seq;
    double row_max = -INFINITY;
    for (std::size_t j = 0; j < d.seq; ++j) {
      const double* kj = k.data() + (row0 + j) * width + col0;
      double s = 0.0;
      for (std::size_t c = 0; c < d.head_dim; ++c) s += qi[c] * kj[c];
      pi[j] = s * scale;
      row_max = std::max(row_max, pi[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < d.seq; ++j) {
      pi[j] = std::exp(pi[j] - row_max);
      total += pi[j];
    }
    for (std::size_t j = 0; j < d.seq; ++j) pi[j] /= total;

    double* oi = out.data() + (row0 + i) * width + col0;
    for (std::size_t c = 0; c < d.head_dim; ++c) oi[c] = 0.0;
    for (std::size_t j = 0; j < d.seq; ++j) {
      const double* vj = v.data() + (row0 + j) * width + col0;
      for (std::size_t c = 0; c < d.head_dim; ++c) oi[c] += pi[j] * vj[c];
    }
  }
}

void attention_backward_pair(std::span<const double> q, std::span<const double> k,
                             std::span<const double> v, std::span<const double> probs,
                             std::span<const double> grad_out, std::span<double> grad_q,
                             std::span<double> grad_k, std::span<double> grad_v,
                             const AttentionDims& d, std::size_t b, std::size_t h) {
  const std::size_t width = d.width();
  const std::size_t row0 = b * d.seq;
  const std::size_t col0 = h * d.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d.head_dim));
  const double* p = probs.data() + ((b * d.heads + h) * d.seq) * d.seq;
  auto at = [&](std::size_t r) { return (row0 + r) * width + col0; };

  std::vector<double> dscore(d.seq * d.seq);
  for (std::size_t i = 0; i < d.seq; ++i) {
    const double* doi = grad_out.data() + at(i);
    const double* pi = p + i * d.seq;
    double* dsi = dscore.data() + i * d.seq;
    double weighted = 0.0;
    for (std::size_t j = 0; j < d.seq; ++j) {
      const double* vj = v.data() + at(j);
      double dp = 0.0;
      for (std::size_t c = 0; c < d.head_dim; ++c) dp += doi[c] * vj[c];
      dsi[j] = dp;
      weighted += pi[j] * dp;
    }
    for (std::size_t j = 0; j < d.seq; ++j) dsi[j] = pi[j] * (dsi[j] - weighted) * scale;
  }

  for (std::size_t r = 0; r < d.seq; ++r) {
    double* dq = grad_q.data() + at(r);
    double* dk = grad_k.data() + at(r);
    double* dv = grad_v.data() + at(r);
    for (std::size_t c = 0; c < d.head_dim; ++c) dq[c] = dk[c] = dv[c] = 0.0;
  }
  for (std::size_t i = 0; i < d.seq; ++i) {
    const double* qi = q.data() + at(i);
    const double* doi = grad_out.data() + at(i);
    double* dqi = grad_q.data() + at(i);
    for (std::size_t j = 0; j < d.seq; ++j) {
      const double ds = dscore[i * d.seq + j];
      const double pij = p[i * d.seq + j];
      const double* kj = k.data() + at(j);
      double* dkj = grad_k.data() + at(j);
      double* dvj = grad_v.data() + at(j);
      for (std::size_t c = 0; c < d.head_dim; ++c) {
        dqi[c] += ds * kj[c];
        dkj[c] += ds * qi[c];
        dvj[c] += pij * doi[c];
      }
    }
  }
}

// j beats i when it has a larger magnitude, or equal magnitude and a lower index.
inline bool beats(double wj, std::size_t j, double wi, std::size_t i) {
  const double aj = std::fabs(wj), ai = std::fabs(wi);
  return aj > ai || (aj == ai && j < i);
}

}  // namespace

// ---------------------------------------------------------------------------
// serial reference

namespace serial {

void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * n + j];
      c[i * n + j] = s;
    }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[j * k + t];
      c[i * n + j] = s;
    }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[t * m + i] * b[t * n + j];
      c[i * n + j] = s;
    }
}

void nxm_keep(std::span<const double> w, std::span<std::uint8_t> keep, std::size_t n,
              std::size_t m) {
  std::vector<std::size_t> order(n);
  for (std::size_t g = 0; g < w.size() / n; ++g) {
    const double* grp = w.data() + g * n;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return std::fabs(grp[x]) > std::fabs(grp[y]);
    });
    for (std::size_t i = 0; i < n; ++i) keep[g * n + i] = 0;
    for (std::size_t r = 0; r < m; ++r) keep[g * n + order[r]] = 1;
  }
}

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs,
                       const AttentionDims& dims) {
  for (std::size_t b = 0; b < dims.batch; ++b)
    for (std::size_t h = 0; h < dims.heads; ++h)
      attention_forward_pair(q, k, v, out, probs, dims, b, h);
}

void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> grad_out, std::span<double> grad_q,
                        std::span<double> grad_k, std::span<double> grad_v,
                        const AttentionDims& dims) {
  for (std::size_t b = 0; b < dims.batch; ++b)
    for (std::size_t h = 0; h < dims.heads; ++h)
      attention_backward_pair(q, k, v, probs, grad_out, grad_q, grad_k, grad_v, dims, b, h);
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP

namespace parallel {

void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double* ci = c.data() + i * n;
    const double* ai = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      const double at = ai[t];
      const double* bt = b.data() + t * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += at * bt[j];
    }
  }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  // Transposing b lets the inner loop run across j; each c[i, j] still
  // accumulates over t in ascending order.
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t t = 0; t < k; ++t) bt[t * n + j] = b[j * k + t];
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const double* ai = a.data() + i * k;
    double* ci = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      const double at = ai[t];
      const double* row = bt.data() + t * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += at * row[j];
    }
  }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double* ci = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      const double at = a[t * m + i];
      const double* bt = b.data() + t * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += at * bt[j];
    }
  }
}

void nxm_keep(std::span<const double> w, std::span<std::uint8_t> keep, std::size_t n,
              std::size_t m) {
  const std::ptrdiff_t groups = static_cast<std::ptrdiff_t>(w.size() / n);
#pragma omp parallel for schedule(static) if (w.size() * n > kParallelWork)
  for (std::ptrdiff_t g = 0; g < groups; ++g) {
    const double* grp = w.data() + g * n;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t rank = 0;
      for (std::size_t j = 0; j < n; ++j) rank += beats(grp[j], j, grp[i], i) ? 1 : 0;
      keep[g * n + i] = rank < m ? 1 : 0;
    }
  }
}

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs,
                       const AttentionDims& dims) {
  const std::ptrdiff_t pairs = static_cast<std::ptrdiff_t>(dims.batch * dims.heads);
#pragma omp parallel for schedule(static) if (dims.prob_count() * dims.head_dim > kParallelWork)
  for (std::ptrdiff_t p = 0; p < pairs; ++p)
    attention_forward_pair(q, k, v, out, probs, dims, p / dims.heads, p % dims.heads);
}

void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> grad_out, std::span<double> grad_q,
                        std::span<double> grad_k, std::span<double> grad_v,
                        const AttentionDims& dims) {
  const std::ptrdiff_t pairs = static_cast<std::ptrdiff_t>(dims.batch * dims.heads);
#pragma omp parallel for schedule(static) if (dims.prob_count() * dims.head_dim > kParallelWork)
  for (std::ptrdiff_t p = 0; p < pairs; ++p)
    attention_backward_pair(q, k, v, probs, grad_out, grad_q, grad_k, grad_v, dims,
                            p / dims.heads, p % dims.heads);
}

}  // namespace parallel

}  // namespace nxm::kernels
