#pragma once

#include <optional>
#include <string>
#include <vector>

#include "storylab/config.hpp"
#include "storylab/data.hpp"
#include "storylab/evaluator.hpp"
#include "storylab/tokenizer.hpp"
#include "storylab/trainer.hpp"

namespace storylab {

/// The JSONL files of a data directory. Missing optional files load empty.
struct Datasets {
  std::vector<StoryExample> stories;
  std::vector<std::string> books;
  std::vector<RankingItem> ranking;
  std::vector<RankingItem> synthetic;
  std::vector<StoryExample> stories_valid;
  std::vector<RankingItem> ranking_valid;
  std::vector<RankingItem> cloze_valid;

  static Datasets load(const RunConfig& cfg);
  static Datasets from_fixtures(const FixtureSet& set);
};

/// Training stories in prompt-story form followed by the book text.
std::vector<std::string> tokenizer_corpus(const Datasets& data);

TrainingData stage1_data(const Vocab& vocab, const Datasets& data, std::size_t max_seq_len);
TrainingData stage2_data(const Vocab& vocab, const Datasets& data, std::size_t max_seq_len);

std::vector<ScoredSequence> story_sequences(const Vocab& vocab, const std::vector<StoryExample>& stories,
                                            std::size_t max_seq_len);
std::vector<PackedRanking> pack_all(const Vocab& vocab, const std::vector<RankingItem>& items,
                                    std::size_t max_seq_len);

/// Every evaluation protocol on the validation sets.
EvalReport evaluate(const Model& model, const Vocab& vocab, const Datasets& data,
                    const RunConfig& cfg);

/// Checkpoint and report locations inside out_dir.
struct RunFiles {
  static constexpr const char* stage1 = "stage1.ckpt";
  static constexpr const char* stage2 = "stage2.ckpt";
  static constexpr const char* stage2_best = "stage2_best.ckpt";
  static constexpr const char* metrics = "metrics.jsonl";
  static constexpr const char* report_json = "eval_report.json";
  static constexpr const char* report_csv = "eval_report.csv";
};

}  // namespace storylab
