#include "storylab/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "storylab/data.hpp"
#include "storylab/error.hpp"
#include "storylab/graph.hpp"

namespace storylab {
namespace {

void check_distribution(std::span<const double> probs) {
  if (probs.empty()) throw ContractError("nucleus: empty distribution");
  double total = 0.0;
  for (double q : probs) {
    if (!(q >= 0.0) || !std::isfinite(q)) throw ContractError("nucleus: probabilities must be finite and non-negative");
    total += q;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ContractError("nucleus: probabilities sum to " + std::to_string(total) + ", not 1");
  }
}

void check_p(double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ContractError("nucleus: p must lie in (0, 1]");
}

}  // namespace

void SamplerConfig::validate() const {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("sampler.p: must lie in (0, 1]");
  if (max_new_tokens < 1) throw ConfigError("sampler.max_new_tokens: must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("sampler.temperature: must be positive");
}

std::vector<TokenId> nucleus_set(std::span<const double> probs, double p) {
  check_p(p);
  check_distribution(probs);
  std::vector<TokenId> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    const double pa = probs[static_cast<std::size_t>(a)], pb = probs[static_cast<std::size_t>(b)];
    return pa != pb ? pa > pb : a < b;
  });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += probs[static_cast<std::size_t>(order[keep++])];
    if (mass >= p) break;
  }
  order.resize(keep);
  return order;
}

std::vector<double> nucleus_filter(std::span<const double> probs, double p) {
  const auto kept = nucleus_set(probs, p);
  std::vector<double> out(probs.size(), 0.0);
  double mass = 0.0;
  for (TokenId id : kept) mass += probs[static_cast<std::size_t>(id)];
  for (TokenId id : kept) out[static_cast<std::size_t>(id)] = probs[static_cast<std::size_t>(id)] / mass;
  return out;
}

TokenId sample_from(std::span<const double> probs, Rng& rng) {
  // 53 random bits -> uniform in [0, 1)
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = i;
    cum += probs[i];
    if (u < cum) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last);
}

std::vector<double> softmax_with_temperature(std::span<const double> logits, double temperature) {
  std::vector<double> out(logits.size());
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - top) / temperature);
    total += out[i];
  }
  for (double& q : out) q /= total;
  return out;
}

Generation generate(const Model& model, const Vocab& vocab, const SamplerConfig& config,
                    std::optional<std::string_view> prompt, bool instrument) {
  config.validate();
  const std::size_t limit = model.spec().max_seq_len;
  Generation gen;
  gen.context.push_back(vocab.specials().bos);
  const auto seed_ids =
      vocab.encode(prompt ? prompt_story_prefix(*prompt) : std::string(kPromptLead)).token_ids;
  gen.context.insert(gen.context.end(), seed_ids.begin(), seed_ids.end());
  if (gen.context.size() > limit - 1) {
    throw LengthError("generate: prompt needs " + std::to_string(gen.context.size()) +
                      " tokens, the model window leaves room for " + std::to_string(limit - 1));
  }

  Rng rng = make_rng(config.seed, "sample");
  TokenSeq ids = gen.context;
  while (gen.generated.size() < config.max_new_tokens && ids.size() < limit) {
    Graph g(false);
    Tensor logits = model.forward(g, ids);
    const std::size_t V = logits.dim(1);
    const auto row = logits.values().subspan((ids.size() - 1) * V, V);
    const auto probs = softmax_with_temperature(row, config.temperature);
    const auto filtered = nucleus_filter(probs, config.p);
    const TokenId next = sample_from(filtered, rng);
    if (instrument) gen.steps.push_back({nucleus_set(probs, config.p), next});
    gen.generated.push_back(next);
    ids.push_back(next);
    if (config.stop_token && next == *config.stop_token) break;
  }

  TokenSeq body = gen.generated;
  if (config.stop_token && !body.empty() && body.back() == *config.stop_token) body.pop_back();
  gen.continuation = vocab.decode(body);
  TokenSeq all(gen.context.begin() + 1, gen.context.end());
  all.insert(all.end(), body.begin(), body.end());
  gen.text = vocab.decode(all);
  return gen;
}

}  // namespace storylab
