#pragma once

// Dense double-precision kernels behind the autodiff layer.
//
// Every kernel exists twice: `reference` is the plain serial loop nest kept as
// a test oracle, `parallel` is the OpenMP version used in production. Each
// output element is produced by exactly one thread with the same summation
// order as the reference, so the two agree bit for bit whenever the output
// buffer starts at zero.

#include <cstddef>
#include <span>

namespace storylab::kernels {

// C (m x n) += A * B with A (m x k) and B (k x n).
struct GemmShape {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
};

struct AttentionShape {
  std::size_t seq_len = 0;
  std::size_t width = 0;  // model width; each head owns width / heads columns
  std::size_t heads = 1;
};

// Additive mask value for future positions.
inline constexpr double kCausalMask = -1e30;

namespace reference {

void gemm_nn(GemmShape s, std::span<const double> a, std::span<const double> b,
             std::span<double> c);
// C += A * B^T, B stored n x k.
void gemm_nt(GemmShape s, std::span<const double> a, std::span<const double> b,
             std::span<double> c);
// C += A^T * B, A stored k x m.
void gemm_tn(GemmShape s, std::span<const double> a, std::span<const double> b,
             std::span<double> c);

void softmax_rows(std::size_t rows, std::size_t n, std::span<const double> in,
                  std::span<double> out);

// probs receives heads x seq_len x seq_len attention weights for backward.
void causal_attention_forward(AttentionShape s, std::span<const double> q,
                              std::span<const double> k, std::span<const double> v,
                              std::span<double> out, std::span<double> probs);
void causal_attention_backward(AttentionShape s, std::span<const double> q,
                               std::span<const double> k, std::span<const double> v,
                               std::span<const double> probs,
                               std::span<const double> dout, std::span<double> dq,
                               std::span<double> dk, std::span<double> dv);

}  // namespace reference

namespace parallel {

void gemm_nn(GemmShape s, std::span<const double> a, std::span<const double> b,
             std::span<double> c);
void gemm_nt(GemmShape s, std::span<const double> a, std::span<const double> b,
             std::span<double> c);
void gemm_tn(GemmShape s, std::span<const double> a, std::span<const double> b,
             std::span<double> c);

void softmax_rows(std::size_t rows, std::size_t n, std::span<const double> in,
                  std::span<double> out);

void causal_attention_forward(AttentionShape s, std::span<const double> q,
                              std::span<const double> k, std::span<const double> v,
                              std::span<double> out, std::span<double> probs);
void causal_attention_backward(AttentionShape s, std::span<const double> q,
                               std::span<const double> k, std::span<const double> v,
                               std::span<const double> probs,
                               std::span<const double> dout, std::span<double> dq,
                               std::span<double> dk, std::span<double> dv);

}  // namespace parallel

using parallel::causal_attention_backward;
using parallel::causal_attention_forward;
using parallel::gemm_nn;
using parallel::gemm_nt;
using parallel::gemm_tn;
using parallel::softmax_rows;

}  // namespace storylab::kernels
