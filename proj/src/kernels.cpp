#include "storylab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace storylab::kernels {
namespace {

// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelWork = std::size_t{1} << 15;

using Index = std::int64_t;

void softmax_row(std::size_t n, const double* in, double* out) {
  double peak = in[0];
  for (std::size_t j = 1; j < n; ++j) peak = std::max(peak, in[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - peak);
    total += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= total;
}

// One head of masked attention. Columns [h*dh, (h+1)*dh) of q/k/v/out belong
// to head h; probs is the head's T x T slab.
void attention_head_forward(AttentionShape s, std::size_t h, const double* q,
                            const double* k, const double* v, double* out,
                            double* probs, std::vector<double>& scores) {
  const std::size_t T = s.seq_len;
  const std::size_t d = s.width;
  const std::size_t dh = d / s.heads;
  const std::size_t col = h * dh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  scores.resize(T);
  for (std::size_t i = 0; i < T; ++i) {
    const double* qi = q + i * d + col;
    for (std::size_t j = 0; j < T; ++j) {
      const double* kj = k + j * d + col;
      double dot = 0.0;
      for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
      scores[j] = dot * scale + (j > i ? kCausalMask : 0.0);
    }
    double* p = probs + (h * T + i) * T;
    softmax_row(T, scores.data(), p);
    double* oi = out + i * d + col;
    for (std::size_t c = 0; c < dh; ++c) oi[c] = 0.0;
    for (std::size_t j = 0; j < T; ++j) {
      const double pij = p[j];
      const double* vj = v + j * d + col;
      for (std::size_t c = 0; c < dh; ++c) oi[c] += pij * vj[c];
    }
  }
}

void attention_head_backward(AttentionShape s, std::size_t h, const double* q,
                             const double* k, const double* v, const double* probs,
                             const double* dout, double* dq, double* dk, double* dv,
                             std::vector<double>& dp) {
  const std::size_t T = s.seq_len;
  const std::size_t d = s.width;
  const std::size_t dh = d / s.heads;
  const std::size_t col = h * dh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  dp.resize(T);
  for (std::size_t i = 0; i < T; ++i) {
    const double* p = probs + (h * T + i) * T;
    const double* doi = dout + i * d + col;
    double row_dot = 0.0;
    for (std::size_t j = 0; j < T; ++j) {
      const double* vj = v + j * d + col;
      double acc = 0.0;
      for (std::size_t c = 0; c < dh; ++c) acc += doi[c] * vj[c];
      dp[j] = acc;
      row_dot += p[j] * acc;
      double* dvj = dv + j * d + col;
      for (std::size_t c = 0; c < dh; ++c) dvj[c] += p[j] * doi[c];
    }
    const double* qi = q + i * d + col;
    double* dqi = dq + i * d + col;
    for (std::size_t j = 0; j < T; ++j) {
      const double ds = p[j] * (dp[j] - row_dot) * scale;
      const double* kj = k + j * d + col;
      double* dkj = dk + j * d + col;
      for (std::size_t c = 0; c < dh; ++c) {
        dqi[c] += ds * kj[c];
        dkj[c] += ds * qi[c];
      }
    }
  }
}

}  // namespace

namespace reference {

void gemm_nn(GemmShape s, std::span<const double> a, std::span<const double> b,
             std::span<double> c) {
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < s.k; ++p) acc += a[i * s.k + p] * b[p * s.n + j];
      c[i * s.n + j] += acc;
    }
  }
}

void gemm_nt(GemmShape s, std::span<const double> a, std::span<const double> b,
             std::span<double> c) {
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < s.k; ++p) acc += a[i * s.k + p] * b[j * s.k + p];
      c[i * s.n + j] += acc;
    }
  }
}

void gemm_tn(GemmShape s, std::span<const double> a, std::span<const double> b,
             std::span<double> c) {
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < s.k; ++p) acc += a[p * s.m + i] * b[p * s.n + j];
      c[i * s.n + j] += acc;
    }
  }
}

void softmax_rows(std::size_t rows, std::size_t n, std::span<const double> in,
                  std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(n, in.data() + r * n, out.data() + r * n);
}

void causal_attention_forward(AttentionShape s, std::span<const double> q,
                              std::span<const double> k, std::span<const double> v,
                              std::span<double> out, std::span<double> probs) {
  std::vector<double> scores;
  for (std::size_t h = 0; h < s.heads; ++h) {
    attention_head_forward(s, h, q.data(), k.data(), v.data(), out.data(), probs.data(),
                           scores);
  }
}

void causal_attention_backward(AttentionShape s, std::span<const double> q,
                               std::span<const double> k, std::span<const double> v,
                               std::span<const double> probs,
                               std::span<const double> dout, std::span<double> dq,
                               std::span<double> dk, std::span<double> dv) {
  std::vector<double> dp;
  for (std::size_t h = 0; h < s.heads; ++h) {
    attention_head_backward(s, h, q.data(), k.data(), v.data(), probs.data(), dout.data(),
                            dq.data(), dk.data(), dv.data(), dp);
  }
}

}  // namespace reference

namespace parallel {

void gemm_nn(GemmShape s, std::span<const double> a, std::span<const double> b,
             std::span<double> c) {
  const Index m = static_cast<Index>(s.m);
  const std::size_t n = s.n;
  const std::size_t k = s.k;
#pragma omp parallel if (s.m * s.n * s.k > kParallelWork)
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (Index i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const double* ai = a.data() + static_cast<std::size_t>(i) * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = ai[p];
        const double* bp = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += aip * bp[j];
      }
      double* ci = c.data() + static_cast<std::size_t>(i) * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += acc[j];
    }
  }
}

void gemm_nt(GemmShape s, std::span<const double> a, std::span<const double> b,
             std::span<double> c) {
  const Index m = static_cast<Index>(s.m);
  const std::size_t n = s.n;
  const std::size_t k = s.k;
#pragma omp parallel for schedule(static) if (s.m * s.n * s.k > kParallelWork)
  for (Index i = 0; i < m; ++i) {
    const double* ai = a.data() + static_cast<std::size_t>(i) * k;
    double* ci = c.data() + static_cast<std::size_t>(i) * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

void gemm_tn(GemmShape s, std::span<const double> a, std::span<const double> b,
             std::span<double> c) {
  const Index m = static_cast<Index>(s.m);
  const std::size_t mm = s.m;
  const std::size_t n = s.n;
  const std::size_t k = s.k;
#pragma omp parallel if (s.m * s.n * s.k > kParallelWork)
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (Index i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const double api = a[p * mm + static_cast<std::size_t>(i)];
        const double* bp = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += api * bp[j];
      }
      double* ci = c.data() + static_cast<std::size_t>(i) * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += acc[j];
    }
  }
}

void softmax_rows(std::size_t rows, std::size_t n, std::span<const double> in,
                  std::span<double> out) {
  const Index r_count = static_cast<Index>(rows);
#pragma omp parallel for schedule(static) if (rows * n > kParallelWork)
  for (Index r = 0; r < r_count; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * n;
    softmax_row(n, in.data() + off, out.data() + off);
  }
}

void causal_attention_forward(AttentionShape s, std::span<const double> q,
                              std::span<const double> k, std::span<const double> v,
                              std::span<double> out, std::span<double> probs) {
  const Index heads = static_cast<Index>(s.heads);
  const bool wide = s.seq_len * s.seq_len * s.width > kParallelWork;
#pragma omp parallel if (wide)
  {
    std::vector<double> scores;
#pragma omp for schedule(static)
    for (Index h = 0; h < heads; ++h) {
      attention_head_forward(s, static_cast<std::size_t>(h), q.data(), k.data(), v.data(),
                             out.data(), probs.data(), scores);
    }
  }
}

void causal_attention_backward(AttentionShape s, std::span<const double> q,
                               std::span<const double> k, std::span<const double> v,
                               std::span<const double> probs,
                               std::span<const double> dout, std::span<double> dq,
                               std::span<double> dk, std::span<double> dv) {
  const Index heads = static_cast<Index>(s.heads);
  const bool wide = s.seq_len * s.seq_len * s.width > kParallelWork;
#pragma omp parallel if (wide)
  {
    std::vector<double> dp;
#pragma omp for schedule(static)
    for (Index h = 0; h < heads; ++h) {
      attention_head_backward(s, static_cast<std::size_t>(h), q.data(), k.data(), v.data(),
                              probs.data(), dout.data(), dq.data(), dk.data(), dv.data(), dp);
    }
  }
}

}  // namespace parallel
}  // namespace storylab::kernels
