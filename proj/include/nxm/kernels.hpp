#pragma once

// Dense inner loops used by the autodiff engine and the sparsity projections.
//
// Every kernel exists twice: `serial` holds the straightforward reference
// formulation, `parallel` the OpenMP version used at runtime. Each output
// element is produced by exactly one thread with the same accumulation order
// as the reference, so both namespaces agree bit for bit regardless of thread
// count.

#include <cstddef>
#include <cstdint>
#include <span>

namespace nxm::kernels {

/// Problem geometry of the fused multi-head attention kernel. Inputs are
/// [batch * seq, heads * head_dim] row-major.
struct AttentionDims {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  std::size_t width() const { return heads * head_dim; }
  std::size_t prob_count() const { return batch * heads * seq * seq; }
};

namespace serial {

// c[m,n] = a[m,k] * b[k,n]
void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
// c[m,n] = a[m,k] * b[n,k]^T
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
// c[m,n] = a[k,m]^T * b[k,n]
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);

/// keep[i] = 1 for the m largest-magnitude entries of every contiguous group
/// of n values (lower index wins ties), 0 elsewhere. Sort-based reference.
void nxm_keep(std::span<const double> w, std::span<std::uint8_t> keep, std::size_t n,
              std::size_t m);

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs,
                       const AttentionDims& dims);
void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> grad_out, std::span<double> grad_q,
                        std::span<double> grad_k, std::span<double> grad_v,
                        const AttentionDims& dims);

}  // namespace serial

namespace parallel {

void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);

/// Rank-counting selection: one pass per group, O(n) work per element for a
/// fixed group size, so linear in the element count.
void nxm_keep(std::span<const double> w, std::span<std::uint8_t> keep, std::size_t n,
              std::size_t m);

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs,
                       const AttentionDims& dims);
void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> grad_out, std::span<double> grad_q,
                        std::span<double> grad_k, std::span<double> grad_v,
                        const AttentionDims& dims);

}  // namespace parallel

}  // namespace nxm::kernels
