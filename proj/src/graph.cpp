#include "storylab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <utility>

#include "storylab/error.hpp"
#include "storylab/kernels.hpp"

namespace storylab {
namespace {

void check_finite(std::string_view op, std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite " + what);
    }
  }
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  }
}

void require_rank(std::string_view op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(a.shape()));
  }
}

// Splits a shape around `axis` into (outer, n, inner) extents.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(std::string_view op, const Shape& shape, int axis) {
  const int rank = static_cast<int>(shape.size());
  const int ax = axis < 0 ? rank + axis : axis;
  if (ax < 0 || ax >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + to_string(shape));
  }
  AxisSplit s;
  for (int i = 0; i < ax; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.n = shape[static_cast<std::size_t>(ax)];
  for (int i = ax + 1; i < rank; ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

double log_sum_exp(const double* row, std::size_t n) {
  double peak = row[0];
  for (std::size_t j = 1; j < n; ++j) peak = std::max(peak, row[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - peak);
  return peak + std::log(total);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor Graph::make_output(Shape shape, std::initializer_list<const Tensor*> inputs) {
  bool needs_grad = false;
  if (record_) {
    for (const Tensor* t : inputs) needs_grad = needs_grad || t->requires_grad();
  }
  return Tensor(std::move(shape), needs_grad);
}

void Graph::record(std::string_view op, std::vector<Tensor> inputs, const Tensor& output,
                   std::function<void()> backward) {
  check_finite(op, output.values(), "output");
  if (!output.requires_grad()) return;
  nodes_.push_back(GraphNode{op, std::move(inputs), output, std::move(backward)});
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make_output({m, n}, {&a, &b});
  kernels::gemm_nn({m, n, k}, a.values(), b.values(), out.values());
  record("matmul", {a, b}, out, [a, b, out, m, n, k]() mutable {
    std::span<const double> g = std::as_const(out).grad();
    if (a.requires_grad()) kernels::gemm_nt({m, k, n}, g, b.values(), a.grad_buffer());
    if (b.requires_grad()) kernels::gemm_tn({k, n, m}, a.values(), g, b.grad_buffer());
  });
  return out;
}

Tensor Graph::transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out = make_output({n, m}, {&a});
  auto src = a.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  record("transpose", {a}, out, [a, out, m, n]() mutable {
    auto g = std::as_const(out).grad();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
  return out;
}

Tensor Graph::reshape(const Tensor& a, Shape shape) {
  if (element_count(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " +
                         to_string(shape));
  }
  Tensor out = make_output(std::move(shape), {&a});
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  record("reshape", {a}, out, [a, out]() mutable {
    auto g = std::as_const(out).grad();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out = make_output(a.shape(), {&a, &b});
  auto va = a.values(), vb = b.values();
  auto vo = out.values();
  for (std::size_t i = 0; i < vo.size(); ++i) vo[i] = va[i] + vb[i];
  record("add", {a, b}, out, [a, b, out]() mutable {
    auto g = std::as_const(out).grad();
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto gt = t->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
  return out;
}

Tensor Graph::add_row(const Tensor& x, const Tensor& bias) {
  require_rank("add_row", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.size() != n) {
    throw DimensionError("add_row: bias " + to_string(bias.shape()) + " does not match rows of " +
                         to_string(x.shape()));
  }
  Tensor out = make_output(x.shape(), {&x, &bias});
  auto vx = x.values(), vb = bias.values();
  auto vo = out.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) vo[i * n + j] = vx[i * n + j] + vb[j];
  record("add_row", {x, bias}, out, [x, bias, out, m, n]() mutable {
    auto g = std::as_const(out).grad();
    if (x.requires_grad()) {
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
  return out;
}

Tensor Graph::add_scalar(const Tensor& a, double c) {
  Tensor out = make_output(a.shape(), {&a});
  auto va = a.values();
  auto vo = out.values();
  for (std::size_t i = 0; i < vo.size(); ++i) vo[i] = va[i] + c;
  record("add_scalar", {a}, out, [a, out]() mutable {
    auto g = std::as_const(out).grad();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out = make_output(a.shape(), {&a, &b});
  auto va = a.values(), vb = b.values();
  auto vo = out.values();
  for (std::size_t i = 0; i < vo.size(); ++i) vo[i] = va[i] * vb[i];
  record("mul", {a, b}, out, [a, b, out]() mutable {
    auto g = std::as_const(out).grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      auto vb = b.values();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      auto va = a.values();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
  return out;
}

Tensor Graph::scale(const Tensor& a, double c) {
  Tensor out = make_output(a.shape(), {&a});
  auto va = a.values();
  auto vo = out.values();
  for (std::size_t i = 0; i < vo.size(); ++i) vo[i] = va[i] * c;
  record("scale", {a}, out, [a, out, c]() mutable {
    auto g = std::as_const(out).grad();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
  return out;
}

Tensor Graph::sum(const Tensor& a) {
  Tensor out = make_output({1}, {&a});
  double total = 0.0;
  for (double v : a.values()) total += v;
  out.values()[0] = total;
  record("sum", {a}, out, [a, out]() mutable {
    const double g = std::as_const(out).grad()[0];
    for (double& ga : a.grad_buffer()) ga += g;
  });
  return out;
}

Tensor Graph::mean(const Tensor& a) {
  Tensor out = make_output({1}, {&a});
  double total = 0.0;
  for (double v : a.values()) total += v;
  const double n = static_cast<double>(a.size());
  out.values()[0] = total / n;
  record("mean", {a}, out, [a, out, n]() mutable {
    const double g = std::as_const(out).grad()[0] / n;
    for (double& ga : a.grad_buffer()) ga += g;
  });
  return out;
}

Tensor Graph::softmax(const Tensor& x, int axis) {
  const AxisSplit s = split_axis("softmax", x.shape(), axis);
  Tensor out = make_output(x.shape(), {&x});
  auto vx = x.values();
  auto vo = out.values();
  if (s.inner == 1) {
    kernels::softmax_rows(s.outer, s.n, vx, vo);
  } else {
    std::vector<double> line(s.n), res(s.n);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        for (std::size_t j = 0; j < s.n; ++j) line[j] = vx[base + j * s.inner];
        kernels::reference::softmax_rows(1, s.n, line, res);
        for (std::size_t j = 0; j < s.n; ++j) vo[base + j * s.inner] = res[j];
      }
    }
  }
  record("softmax", {x}, out, [x, out, s]() mutable {
    auto g = std::as_const(out).grad();
    auto y = std::as_const(out).values();
    auto gx = x.grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t i = base + j * s.inner;
          dot += g[i] * y[i];
        }
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t i = base + j * s.inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
  return out;
}

Tensor Graph::log_softmax(const Tensor& x, int axis) {
  const AxisSplit s = split_axis("log_softmax", x.shape(), axis);
  Tensor out = make_output(x.shape(), {&x});
  auto vx = x.values();
  auto vo = out.values();
  std::vector<double> line(s.n);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      for (std::size_t j = 0; j < s.n; ++j) line[j] = vx[base + j * s.inner];
      const double lse = log_sum_exp(line.data(), s.n);
      for (std::size_t j = 0; j < s.n; ++j) vo[base + j * s.inner] = line[j] - lse;
    }
  }
  record("log_softmax", {x}, out, [x, out, s]() mutable {
    auto g = std::as_const(out).grad();
    auto y = std::as_const(out).values();
    auto gx = x.grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double total = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) total += g[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t i = base + j * s.inner;
          gx[i] += g[i] - std::exp(y[i]) * total;
        }
      }
    }
  });
  return out;
}

Tensor Graph::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t n = x.shape().back();
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layer_norm: gain " + to_string(gain.shape()) + " / bias " +
                         to_string(bias.shape()) + " must match last axis of " +
                         to_string(x.shape()));
  }
  const std::size_t rows = x.size() / n;
  Tensor out = make_output(x.shape(), {&x, &gain, &bias});
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  auto vx = x.values(), vg = gain.values(), vb = bias.values();
  auto vo = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = vx.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * rs;
      (*xhat)[r * n + j] = h;
      vo[r * n + j] = h * vg[j] + vb[j];
    }
  }
  record("layer_norm", {x, gain, bias}, out,
         [x, gain, bias, out, xhat, rstd, rows, n]() mutable {
           auto g = std::as_const(out).grad();
           auto vg = gain.values();
           const auto& h = *xhat;
           if (gain.requires_grad() || bias.requires_grad()) {
             for (std::size_t r = 0; r < rows; ++r) {
               for (std::size_t j = 0; j < n; ++j) {
                 if (gain.requires_grad()) gain.grad_buffer()[j] += g[r * n + j] * h[r * n + j];
                 if (bias.requires_grad()) bias.grad_buffer()[j] += g[r * n + j];
               }
             }
           }
           if (!x.requires_grad()) return;
           auto gx = x.grad_buffer();
           const double inv_n = 1.0 / static_cast<double>(n);
           for (std::size_t r = 0; r < rows; ++r) {
             double mean_dh = 0.0, mean_dh_h = 0.0;
             for (std::size_t j = 0; j < n; ++j) {
               const double dh = g[r * n + j] * vg[j];
               mean_dh += dh;
               mean_dh_h += dh * h[r * n + j];
             }
             mean_dh *= inv_n;
             mean_dh_h *= inv_n;
             for (std::size_t j = 0; j < n; ++j) {
               const double dh = g[r * n + j] * vg[j];
               gx[r * n + j] += (*rstd)[r] * (dh - mean_dh - h[r * n + j] * mean_dh_h);
             }
           }
         });
  return out;
}

Tensor Graph::gelu(const Tensor& x) {
  Tensor out = make_output(x.shape(), {&x});
  auto vx = x.values();
  auto vo = out.values();
  for (std::size_t i = 0; i < vo.size(); ++i) {
    const double v = vx[i];
    vo[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  record("gelu", {x}, out, [x, out]() mutable {
    auto g = std::as_const(out).grad();
    auto vx = x.values();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = vx[i];
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
  });
  return out;
}

Tensor Graph::embedding(const Tensor& table, std::span<const TokenId> ids) {
  require_rank("embedding", table, 2);
  if (ids.empty()) throw ContractError("embedding: empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(id) + " outside [0," +
                       std::to_string(vocab) + ")");
    }
  }
  Tensor out = make_output({ids.size(), d}, {&table});
  auto vt = table.values();
  auto vo = out.values();
  for (std::size_t t = 0; t < ids.size(); ++t) {
    std::copy_n(vt.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[t]) * d),
                d, vo.begin() + static_cast<std::ptrdiff_t>(t * d));
  }
  TokenSeq rows(ids.begin(), ids.end());
  record("embedding", {table}, out, [table, out, rows = std::move(rows), d]() mutable {
    auto g = std::as_const(out).grad();
    auto gt = table.grad_buffer();
    for (std::size_t t = 0; t < rows.size(); ++t) {
      const std::size_t base = static_cast<std::size_t>(rows[t]) * d;
      for (std::size_t j = 0; j < d; ++j) gt[base + j] += g[t * d + j];
    }
  });
  return out;
}

Tensor Graph::causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                               std::size_t heads) {
  require_rank("causal_attention", q, 2);
  require_same_shape("causal_attention", q, k);
  require_same_shape("causal_attention", q, v);
  const std::size_t T = q.dim(0), d = q.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(d) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
  const kernels::AttentionShape shape{T, d, heads};
  Tensor out = make_output({T, d}, {&q, &k, &v});
  auto probs = std::make_shared<std::vector<double>>(heads * T * T);
  kernels::causal_attention_forward(shape, q.values(), k.values(), v.values(), out.values(),
                                    *probs);
  record("causal_attention", {q, k, v}, out, [q, k, v, out, probs, shape]() mutable {
    // The kernel accumulates into all three; scratch buffers stand in for
    // inputs that need no gradient.
    std::vector<double> sq, sk, sv;
    auto target = [](const Tensor& t, std::vector<double>& scratch) -> std::span<double> {
      if (t.requires_grad()) return t.grad_buffer();
      scratch.assign(t.size(), 0.0);
      return scratch;
    };
    std::span<double> dq = target(q, sq);
    std::span<double> dk = target(k, sk);
    std::span<double> dv = target(v, sv);
    kernels::causal_attention_backward(shape, q.values(), k.values(), v.values(), *probs,
                                       std::as_const(out).grad(), dq, dk, dv);
  });
  return out;
}

Tensor Graph::dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: p must lie in [0,1)");
  if (p == 0.0) return x;
  Tensor out = make_output(x.shape(), {&x});
  auto mask = std::make_shared<std::vector<double>>(x.size());
  std::bernoulli_distribution keep(1.0 - p);
  const double factor = 1.0 / (1.0 - p);
  auto vx = x.values();
  auto vo = out.values();
  for (std::size_t i = 0; i < vo.size(); ++i) {
    (*mask)[i] = keep(rng) ? factor : 0.0;
    vo[i] = vx[i] * (*mask)[i];
  }
  record("dropout", {x}, out, [x, out, mask]() mutable {
    auto g = std::as_const(out).grad();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
  return out;
}

Tensor Graph::cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                            TokenId ignore_index) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t T = logits.dim(0), V = logits.dim(1);
  if (targets.size() != T) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + to_string(logits.shape()));
  }
  std::size_t count = 0;
  for (TokenId t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0," +
                       std::to_string(V) + ")");
    }
    ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: empty loss, every target is ignored");
  auto lse = std::make_shared<std::vector<double>>(T, 0.0);
  auto vl = logits.values();
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    if (targets[t] == ignore_index) continue;
    const double* row = vl.data() + t * V;
    (*lse)[t] = log_sum_exp(row, V);
    total += (*lse)[t] - row[static_cast<std::size_t>(targets[t])];
  }
  Tensor out = make_output({1}, {&logits});
  const double n = static_cast<double>(count);
  out.values()[0] = total / n;
  TokenSeq tgt(targets.begin(), targets.end());
  record("cross_entropy", {logits}, out,
         [logits, out, lse, tgt = std::move(tgt), ignore_index, T, V, n]() mutable {
           const double g = std::as_const(out).grad()[0] / n;
           auto vl = logits.values();
           auto gl = logits.grad_buffer();
           for (std::size_t t = 0; t < T; ++t) {
             if (tgt[t] == ignore_index) continue;
             const double l = (*lse)[t];
             for (std::size_t j = 0; j < V; ++j) gl[t * V + j] += g * std::exp(vl[t * V + j] - l);
             gl[t * V + static_cast<std::size_t>(tgt[t])] -= g;
           }
         });
  return out;
}

Tensor Graph::token_log_probs(const Tensor& logits, std::span<const TokenId> targets) {
  require_rank("token_log_probs", logits, 2);
  const std::size_t T = logits.dim(0), V = logits.dim(1);
  if (targets.size() != T) {
    throw DimensionError("token_log_probs: " + std::to_string(targets.size()) +
                         " targets for logits " + to_string(logits.shape()));
  }
  for (TokenId t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw IndexError("token_log_probs: target " + std::to_string(t) + " outside [0," +
                       std::to_string(V) + ")");
    }
  }
  auto lse = std::make_shared<std::vector<double>>(T);
  Tensor out = make_output({T}, {&logits});
  auto vl = logits.values();
  auto vo = out.values();
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = vl.data() + t * V;
    (*lse)[t] = log_sum_exp(row, V);
    vo[t] = row[static_cast<std::size_t>(targets[t])] - (*lse)[t];
  }
  TokenSeq tgt(targets.begin(), targets.end());
  record("token_log_probs", {logits}, out,
         [logits, out, lse, tgt = std::move(tgt), T, V]() mutable {
           auto g = std::as_const(out).grad();
           auto vl = logits.values();
           auto gl = logits.grad_buffer();
           for (std::size_t t = 0; t < T; ++t) {
             if (g[t] == 0.0) continue;
             const double l = (*lse)[t];
             for (std::size_t j = 0; j < V; ++j) gl[t * V + j] -= g[t] * std::exp(vl[t * V + j] - l);
             gl[t * V + static_cast<std::size_t>(tgt[t])] += g[t];
           }
         });
  return out;
}

Tensor Graph::select(const Tensor& x, std::span<const std::size_t> offsets) {
  if (offsets.empty()) throw ContractError("select: empty offset list");
  for (std::size_t off : offsets) {
    if (off >= x.size()) {
      throw IndexError("select: offset " + std::to_string(off) + " outside tensor of size " +
                       std::to_string(x.size()));
    }
  }
  Tensor out = make_output({offsets.size()}, {&x});
  auto vx = x.values();
  auto vo = out.values();
  for (std::size_t i = 0; i < offsets.size(); ++i) vo[i] = vx[offsets[i]];
  std::vector<std::size_t> offs(offsets.begin(), offsets.end());
  record("select", {x}, out, [x, out, offs = std::move(offs)]() mutable {
    auto g = std::as_const(out).grad();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < offs.size(); ++i) gx[offs[i]] += g[i];
  });
  return out;
}

Tensor Graph::stack(std::span<const Tensor> scalars) {
  if (scalars.empty()) throw ContractError("stack: nothing to stack");
  bool needs_grad = false;
  for (const Tensor& s : scalars) {
    if (s.size() != 1) throw DimensionError("stack: expected single elements, got " + to_string(s.shape()));
    needs_grad = needs_grad || s.requires_grad();
  }
  Tensor out(Shape{scalars.size()}, record_ && needs_grad);
  for (std::size_t i = 0; i < scalars.size(); ++i) out.values()[i] = scalars[i].values()[0];
  std::vector<Tensor> inputs(scalars.begin(), scalars.end());
  record("stack", inputs, out, [inputs, out]() mutable {
    auto g = std::as_const(out).grad();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].requires_grad()) inputs[i].grad()[0] += g[i];
    }
  });
  return out;
}

void Graph::backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1) {
    throw ContractError("backward: root must be a scalar, got " +
                        (root.defined() ? to_string(root.shape()) : std::string("undefined")));
  }
  if (!root.requires_grad()) {
    throw ContractError("backward: root does not depend on any tensor that requires grad");
  }
  if (backward_done_) throw ContractError("backward: graph already differentiated");
  backward_done_ = true;

  Tensor seed = root;
  seed.grad_buffer()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    check_finite(it->op, std::as_const(it->output).grad(), "gradient");
    it->backward();
  }
  for (const auto& node : nodes_) {
    for (const auto& in : node.inputs) {
      if (in.has_grad()) check_finite(node.op, in.grad_buffer(), "input gradient");
    }
  }
}

}  // namespace storylab
