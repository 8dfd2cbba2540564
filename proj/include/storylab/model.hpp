#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "storylab/graph.hpp"
#include "storylab/rng.hpp"
#include "storylab/tensor.hpp"
#include "storylab/types.hpp"

namespace storylab {

/// Decoder-only transformer hyperparameters. Defaults are the desk-scale
/// configuration.
struct ModelSpec {
  std::size_t vocab_size = 512;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_seq_len = 256;
  bool tie_embeddings = true;
  double dropout = 0.0;

  // Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

struct ForwardOptions {
  bool train = false;
  // Required when train && spec.dropout > 0.
  Rng* dropout_rng = nullptr;
};

/// GPT-2 style pre-norm transformer: learned token and position embeddings,
/// n_layers of (LN -> causal MHA -> residual, LN -> GELU MLP -> residual),
/// final LN, and an output projection tied to the token embedding by default.
///
/// Parameters are shared handles; `Model` is move-only and `clone()` makes a
/// deep copy.
class Model {
 public:
  // normal(0, 0.02) weights, zero biases, unit norm gains.
  static Model init(const ModelSpec& spec, std::uint64_t seed);
  // Same layout with every value zero (checkpoint loading fills it in).
  static Model zeros(const ModelSpec& spec);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  Model clone() const;
  void copy_values_from(const Model& other);

  const ModelSpec& spec() const noexcept { return spec_; }
  // Unique trainable tensors in a fixed order; a tied head appears once.
  std::vector<NamedParameter>& parameters() noexcept { return params_; }
  const std::vector<NamedParameter>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const;
  const Tensor& parameter(std::string_view name) const;
  // The matrix producing logits, (V x d) when tied, (d x V) when untied.
  const Tensor& output_projection() const;

  void zero_grad();

  // logits (T x V); row t parameterizes P(x_{t+1} | x_{0..t}).
  Tensor forward(Graph& g, std::span<const TokenId> ids, const ForwardOptions& opts = {}) const;

 private:
  struct Layer {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w_fc, b_fc, w_proj, b_proj;
  };

  explicit Model(const ModelSpec& spec);
  void build(const ModelSpec& spec);

  ModelSpec spec_;
  Tensor wte_, wpe_, lnf_gain_, lnf_bias_, lm_head_;
  std::vector<Layer> layers_;
  std::vector<NamedParameter> params_;
};

/// Closed-form parameter count for a spec.
std::size_t parameter_count(const ModelSpec& spec);

/// log P(ids[t+1] | ids[0..t]) for t in [0, T-1).
std::vector<double> sequence_log_probs(const Model& model, std::span<const TokenId> ids);

}  // namespace storylab
