#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "storylab/data.hpp"
#include "storylab/model.hpp"
#include "storylab/objectives.hpp"
#include "storylab/tokenizer.hpp"

namespace storylab {

/// Anything that assigns next-token log-probabilities to a sequence:
/// entry t is log P(ids[t+1] | ids[0..t]).
class SequenceScorer {
 public:
  virtual ~SequenceScorer() = default;
  virtual std::vector<double> token_log_probs(std::span<const TokenId> ids) const = 0;
};

class ModelScorer final : public SequenceScorer {
 public:
  explicit ModelScorer(const Model& model) : model_(model) {}
  std::vector<double> token_log_probs(std::span<const TokenId> ids) const override;

 private:
  const Model& model_;
};

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x);
  double value() const noexcept { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

struct PerplexityStats {
  double total_nll = 0.0;
  std::size_t subwords = 0;
  std::size_t words = 0;
  std::size_t sequences = 0;

  double subword_ppl() const;
  double word_ppl() const;
};

/// Corpus-pooled NLL over every predicted token (token-weighted, not a mean
/// of per-sequence perplexities).
PerplexityStats perplexity_stats(const SequenceScorer& scorer, std::span<const ScoredSequence> corpus);
double subword_perplexity(const SequenceScorer& scorer, std::span<const ScoredSequence> corpus);
/// exp(total NLL / word count): each word's probability is the product of its
/// subword probabilities.
double word_perplexity(const SequenceScorer& scorer, std::span<const ScoredSequence> corpus);

struct Accuracy {
  std::size_t correct = 0;
  std::size_t count = 0;
  double value() const { return count == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(count); }
};

/// Index of the unique minimum, or nullopt when the minimum is tied.
std::optional<std::size_t> strict_argmin(std::span<const double> values);

/// Perplexity exp(-score) of every choice; the item is correct when the
/// correct choice is the strict minimum.
std::vector<double> choice_perplexities(const SequenceScorer& scorer, const PackedRanking& item,
                                        ScoreSpan span = {});
Accuracy mc_ranking_accuracy(const SequenceScorer& scorer, std::span<const PackedRanking> items,
                             ScoreSpan span = {});

struct PromptRankingOptions {
  std::size_t n_distractors = 9;
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
};

/// Conditional story perplexity under the true prompt and n_distractors
/// other prompts drawn without replacement; only story tokens (and eos) are
/// scored. Stories are visited in reshuffled passes over the set.
Accuracy prompt_ranking(const SequenceScorer& scorer, const Vocab& vocab,
                        std::span<const StoryExample> stories, const PromptRankingOptions& opts,
                        std::size_t max_seq_len);

/// Packs [bos] + prompt-story text + [eos] and returns the index of the first
/// story token.
std::pair<TokenSeq, std::size_t> pack_conditional_story(const Vocab& vocab, std::string_view prompt,
                                                        std::string_view story,
                                                        std::size_t max_seq_len);

struct EvalReport {
  PerplexityStats perplexity;
  Accuracy prompt_ranking;
  std::map<std::string, Accuracy> mc;
  nlohmann::json metadata = nlohmann::json::object();

  nlohmann::json to_json() const;
  // One row per (dataset, metric): dataset,metric,value,count
  std::string to_csv() const;
};

}  // namespace storylab
