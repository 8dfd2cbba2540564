#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "storylab/model.hpp"
#include "storylab/rng.hpp"
#include "storylab/tokenizer.hpp"

namespace storylab {

struct SamplerConfig {
  double p = 0.9;
  std::size_t max_new_tokens = 200;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  // Generation always stops at the length cap; with a stop token it also
  // stops when that token is drawn.
  std::optional<TokenId> stop_token;

  void validate() const;
};

/// Token ids of the nucleus: sorted by (probability desc, id asc), the
/// shortest prefix whose mass reaches p. Input must sum to 1 within 1e-9.
std::vector<TokenId> nucleus_set(std::span<const double> probs, double p);

/// probs restricted to the nucleus and renormalized; zero elsewhere.
std::vector<double> nucleus_filter(std::span<const double> probs, double p);

/// Inverse-CDF draw from a normalized distribution.
TokenId sample_from(std::span<const double> probs, Rng& rng);

/// softmax(logits / temperature)
std::vector<double> softmax_with_temperature(std::span<const double> logits, double temperature);

struct GenerationStep {
  std::vector<TokenId> nucleus;
  TokenId token = 0;
};

struct Generation {
  TokenSeq context;     // seed tokens, starting with bos
  TokenSeq generated;   // sampled tokens, including a drawn stop token
  std::string text;     // decoded context (without bos) followed by the sample
  std::string continuation;  // decoded sample without the stop token
  std::vector<GenerationStep> steps;  // filled when instrumented
};

/// Seeds with the formatted prompt prefix when a prompt is given, otherwise
/// with the template's opening so the model writes its own prompt.
Generation generate(const Model& model, const Vocab& vocab, const SamplerConfig& config,
                    std::optional<std::string_view> prompt, bool instrument = false);

}  // namespace storylab
