#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "storylab/graph.hpp"
#include "storylab/model.hpp"
#include "storylab/schedule.hpp"
#include "storylab/tokenizer.hpp"
#include "storylab/types.hpp"

namespace storylab {

struct StoryExample {
  std::string prompt;
  std::string story;

  bool operator==(const StoryExample&) const = default;
};

/// "Prompt: {prompt}\n<SEP>\nStory: {story}"
std::string format_prompt_story(const StoryExample& ex);
/// Inverse of format_prompt_story; malformed text raises DataError.
StoryExample parse_prompt_story(std::string_view text);
/// The formatted text up to and including "Story:", used to seed generation.
std::string prompt_story_prefix(std::string_view prompt);
/// Start of the template, for unconditional generation.
inline constexpr std::string_view kPromptLead = "Prompt:";

struct RankingItem {
  std::string context;
  std::vector<std::string> choices;
  std::size_t correct_index = 0;

  // DataError on N < 2, empty or duplicate choices, or a bad index.
  void validate() const;
  bool operator==(const RankingItem&) const = default;
};

struct SyntheticPair {
  std::string human;
  std::string machine;

  // Two-way item with the human text at index 0 and no context.
  RankingItem to_ranking_item() const;
};

enum class Schema { stories, books, ranking, synthetic };

/// Parses a JSON-lines file and validates each record against the schema.
/// Errors name the file, the 1-based line and, for schema violations, the
/// field. Blank lines are skipped.
std::vector<nlohmann::json> load_jsonl(const std::filesystem::path& path, Schema schema);

std::vector<StoryExample> load_stories(const std::filesystem::path& path);
std::vector<std::string> load_books(const std::filesystem::path& path);
std::vector<RankingItem> load_ranking(const std::filesystem::path& path);
std::vector<RankingItem> load_synthetic(const std::filesystem::path& path);

nlohmann::json to_json(const StoryExample& ex);
nlohmann::json to_json(const RankingItem& item);
nlohmann::json to_json(const SyntheticPair& pair);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

/// Sequence i is [bos] + encode(context + " " + choice_i), or just the choice
/// when the context is empty, truncated to max_seq_len tokens. An item whose
/// truncation removes every continuation token of some choice is rejected.
PackedRanking pack_ranking_item(const RankingItem& item, const Vocab& vocab,
                                std::size_t max_seq_len);

/// [bos] + encode(text) + [eos], truncated to max_seq_len, with the word-start
/// flag of every predicted token (eos is not a word).
ScoredSequence lm_sequence(const Vocab& vocab, std::string_view text, std::size_t max_seq_len);

/// Right-padded token matrix. mask[r][t] is true for real tokens.
struct Batch {
  Task task = Task::lm;
  std::vector<TokenSeq> rows;
  std::vector<std::vector<bool>> mask;
  std::size_t width = 0;
};

Batch make_lm_batch(std::span<const TokenSeq> sequences, TokenId pad);

/// Mean over rows of each row's mean next-token NLL; targets that are padding
/// are excluded.
Tensor batch_lm_loss(Graph& g, const Model& model, const Batch& batch,
                     const ForwardOptions& opts = {});

/// Walks a dataset in reshuffled epochs. The examples of step s are a pure
/// function of (seed, stream, s), so resuming needs no saved data state.
class EpochSampler {
 public:
  EpochSampler(std::size_t size, std::uint64_t seed, std::string stream);

  std::vector<std::size_t> batch(std::int64_t step, std::size_t batch_size);
  const std::vector<std::size_t>& epoch_order(std::uint64_t epoch);

 private:
  std::size_t size_;
  std::uint64_t seed_;
  std::string stream_;
  std::uint64_t cached_epoch_ = UINT64_MAX;
  std::vector<std::size_t> order_;
};

}  // namespace storylab
