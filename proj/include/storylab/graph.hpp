#pragma once

#include <functional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "storylab/tensor.hpp"
#include "storylab/types.hpp"

namespace storylab {

/// One recorded operation. `backward` pulls the output gradient into the
/// inputs' gradients.
struct GraphNode {
  std::string_view op;
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<void()> backward;
};

/// Tape of operations for reverse-mode differentiation.
///
/// Nodes are appended as ops execute, so the tape is topologically ordered by
/// construction. A graph built with `record = false` computes values only and
/// keeps no tape, which is what evaluation and sampling use.
///
/// Every op output is checked for NaN/Inf and raises NumericError.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }
  const std::vector<GraphNode>& nodes() const noexcept { return nodes_; }

  // a (m x k) . b (k x n)
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor reshape(const Tensor& a, Shape shape);

  Tensor add(const Tensor& a, const Tensor& b);
  // x (m x n) + bias (n) broadcast over rows
  Tensor add_row(const Tensor& x, const Tensor& bias);
  Tensor add_scalar(const Tensor& a, double c);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double c);

  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);

  // Normalizes along `axis`; -1 means the last axis.
  Tensor softmax(const Tensor& x, int axis = -1);
  Tensor log_softmax(const Tensor& x, int axis = -1);

  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                    double eps = 1e-5);
  // tanh approximation, as in GPT-2
  Tensor gelu(const Tensor& x);

  // Rows of table (V x d) selected by ids -> (T x d).
  Tensor embedding(const Tensor& table, std::span<const TokenId> ids);

  // q, k, v are (T x d); heads split the columns. Position i attends to j <= i.
  Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          std::size_t heads);

  // Inverted dropout; identity when p == 0.
  Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

  // Mean of -log softmax(logits)[t, targets[t]] over positions whose target is
  // not ignore_index.
  Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                       TokenId ignore_index = -1);
  // log softmax(logits)[t, targets[t]] for every row -> (T)
  Tensor token_log_probs(const Tensor& logits, std::span<const TokenId> targets);

  // Flat elements of x at the given offsets -> (len)
  Tensor select(const Tensor& x, std::span<const std::size_t> offsets);
  // Concatenates single-element tensors -> (N)
  Tensor stack(std::span<const Tensor> scalars);

  /// Seeds d(root)/d(root) = 1 and runs the tape backwards once.
  void backward(const Tensor& root);

 private:
  Tensor make_output(Shape shape, std::initializer_list<const Tensor*> inputs);
  void record(std::string_view op, std::vector<Tensor> inputs, const Tensor& output,
              std::function<void()> backward);

  bool record_;
  bool backward_done_ = false;
  std::vector<GraphNode> nodes_;
};

}  // namespace storylab
