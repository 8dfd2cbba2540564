#include "storylab/model.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "storylab/error.hpp"

namespace storylab {

void ModelSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("model." + field + ": " + why);
  };
  if (vocab_size < 4) fail("vocab_size", "must hold at least the 4 special tokens");
  if (d_model == 0) fail("d_model", "must be positive");
  if (n_layers == 0) fail("n_layers", "must be positive");
  if (n_heads == 0) fail("n_heads", "must be positive");
  if (d_model % n_heads != 0) fail("n_heads", "must divide d_model");
  if (d_ff == 0) fail("d_ff", "must be positive");
  if (max_seq_len < 2) fail("max_seq_len", "must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout", "must lie in [0,1)");
}

std::size_t parameter_count(const ModelSpec& s) {
  const std::size_t d = s.d_model, ff = s.d_ff;
  const std::size_t per_layer = 2 * d            // ln_1
                                + 4 * (d * d + d)  // q, k, v, o
                                + 2 * d            // ln_2
                                + d * ff + ff      // fc
                                + ff * d + d;      // proj
  std::size_t total = s.vocab_size * d + s.max_seq_len * d + s.n_layers * per_layer + 2 * d;
  if (!s.tie_embeddings) total += d * s.vocab_size;
  return total;
}

Model::Model(const ModelSpec& spec) { build(spec); }

void Model::build(const ModelSpec& spec) {
  spec.validate();
  spec_ = spec;
  params_.clear();
  layers_.clear();
  const std::size_t d = spec.d_model, ff = spec.d_ff, V = spec.vocab_size;
  auto add = [this](const std::string& name, Shape shape) {
    Tensor t(std::move(shape), true);
    params_.push_back({name, t});
    return t;
  };
  wte_ = add("wte", {V, d});
  wpe_ = add("wpe", {spec.max_seq_len, d});
  for (std::size_t l = 0; l < spec.n_layers; ++l) {
    const std::string p = "h." + std::to_string(l) + ".";
    Layer layer;
    layer.ln1_gain = add(p + "ln_1.g", {d});
    layer.ln1_bias = add(p + "ln_1.b", {d});
    layer.wq = add(p + "attn.q.w", {d, d});
    layer.bq = add(p + "attn.q.b", {d});
    layer.wk = add(p + "attn.k.w", {d, d});
    layer.bk = add(p + "attn.k.b", {d});
    layer.wv = add(p + "attn.v.w", {d, d});
    layer.bv = add(p + "attn.v.b", {d});
    layer.wo = add(p + "attn.o.w", {d, d});
    layer.bo = add(p + "attn.o.b", {d});
    layer.ln2_gain = add(p + "ln_2.g", {d});
    layer.ln2_bias = add(p + "ln_2.b", {d});
    layer.w_fc = add(p + "mlp.fc.w", {d, ff});
    layer.b_fc = add(p + "mlp.fc.b", {ff});
    layer.w_proj = add(p + "mlp.proj.w", {ff, d});
    layer.b_proj = add(p + "mlp.proj.b", {d});
    layers_.push_back(std::move(layer));
  }
  lnf_gain_ = add("ln_f.g", {d});
  lnf_bias_ = add("ln_f.b", {d});
  lm_head_ = spec.tie_embeddings ? wte_ : add("lm_head.w", {d, V});
}

Model Model::zeros(const ModelSpec& spec) { return Model(spec); }

Model Model::init(const ModelSpec& spec, std::uint64_t seed) {
  Model m(spec);
  Rng rng = make_rng(seed, "init");
  std::normal_distribution<double> normal(0.0, 0.02);
  for (auto& [name, t] : m.params_) {
    auto values = t.values();
    if (t.rank() == 2) {
      for (double& v : values) v = normal(rng);
    } else if (name.ends_with(".g")) {
      std::fill(values.begin(), values.end(), 1.0);
    }
  }
  return m;
}

Model Model::clone() const {
  Model m(spec_);
  m.copy_values_from(*this);
  return m;
}

void Model::copy_values_from(const Model& other) {
  if (!(other.spec_ == spec_)) throw ContractError("copy_values_from: model specs differ");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = other.params_[i].tensor.values();
    std::copy(src.begin(), src.end(), params_[i].tensor.values().begin());
  }
}

std::size_t Model::parameter_count() const {
  return std::accumulate(params_.begin(), params_.end(), std::size_t{0},
                         [](std::size_t acc, const NamedParameter& p) { return acc + p.tensor.size(); });
}

const Tensor& Model::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw IndexError("no parameter named '" + std::string(name) + "'");
}

const Tensor& Model::output_projection() const { return lm_head_; }

void Model::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Tensor Model::forward(Graph& g, std::span<const TokenId> ids, const ForwardOptions& opts) const {
  const std::size_t T = ids.size();
  if (T == 0) throw LengthError("forward: empty sequence");
  if (T > spec_.max_seq_len) {
    throw LengthError("forward: sequence of " + std::to_string(T) + " tokens exceeds max_seq_len " +
                      std::to_string(spec_.max_seq_len));
  }
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= spec_.vocab_size) {
      throw IndexError("forward: token id " + std::to_string(id) + " outside [0," +
                       std::to_string(spec_.vocab_size) + ")");
    }
  }
  const bool use_dropout = opts.train && spec_.dropout > 0.0;
  if (use_dropout && opts.dropout_rng == nullptr) {
    throw ContractError("forward: training with dropout needs an rng");
  }
  auto drop = [&](const Tensor& t) {
    return use_dropout ? g.dropout(t, spec_.dropout, *opts.dropout_rng) : t;
  };

  TokenSeq positions(T);
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = drop(g.add(g.embedding(wte_, ids), g.embedding(wpe_, positions)));
  for (const Layer& L : layers_) {
    Tensor h = g.layer_norm(x, L.ln1_gain, L.ln1_bias);
    Tensor q = g.add_row(g.matmul(h, L.wq), L.bq);
    Tensor k = g.add_row(g.matmul(h, L.wk), L.bk);
    Tensor v = g.add_row(g.matmul(h, L.wv), L.bv);
    Tensor a = g.causal_attention(q, k, v, spec_.n_heads);
    a = drop(g.add_row(g.matmul(a, L.wo), L.bo));
    x = g.add(x, a);
    h = g.layer_norm(x, L.ln2_gain, L.ln2_bias);
    Tensor f = g.gelu(g.add_row(g.matmul(h, L.w_fc), L.b_fc));
    f = drop(g.add_row(g.matmul(f, L.w_proj), L.b_proj));
    x = g.add(x, f);
  }
  x = g.layer_norm(x, lnf_gain_, lnf_bias_);
  return spec_.tie_embeddings ? g.matmul(x, g.transpose(wte_)) : g.matmul(x, lm_head_);
}

std::vector<double> sequence_log_probs(const Model& model, std::span<const TokenId> ids) {
  if (ids.size() < 2) {
    throw ContractError("sequence_log_probs: need at least 2 tokens, got " +
                        std::to_string(ids.size()));
  }
  Graph g(false);
  Tensor logits = model.forward(g, ids.first(ids.size() - 1));
  Tensor lp = g.token_log_probs(logits, ids.subspan(1));
  auto v = lp.values();
  return {v.begin(), v.end()};
}

}  // namespace storylab
