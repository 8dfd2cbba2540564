#include "storylab/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "storylab/checkpoint.hpp"
#include "storylab/error.hpp"
#include "storylab/rng.hpp"

namespace storylab {
namespace {

using json = nlohmann::json;

constexpr std::string_view kPromptTag = "Prompt: ";
constexpr std::string_view kStoryTag = "Story: ";

std::string separator_block() { return "\n" + std::string(kSepText) + "\n"; }

class RecordError {
 public:
  RecordError(const std::filesystem::path& path, std::size_t line)
      : where_(path.filename().string() + ":" + std::to_string(line)) {}
  [[noreturn]] void field(std::string_view name, std::string_view why) const {
    throw DataError(where_ + ": field '" + std::string(name) + "' " + std::string(why));
  }
  [[noreturn]] void record(std::string_view why) const {
    throw DataError(where_ + ": " + std::string(why));
  }

 private:
  std::string where_;
};

const std::string& text_field(const json& j, std::string_view name, const RecordError& err,
                              bool allow_empty = false) {
  const auto it = j.find(name);
  if (it == j.end()) err.field(name, "is missing");
  if (!it->is_string()) err.field(name, "must be a string");
  const auto& s = it->get_ref<const std::string&>();
  if (!allow_empty && normalize_whitespace(s).empty()) err.field(name, "is empty");
  return s;
}

void validate_record(const json& j, Schema schema, const RecordError& err) {
  if (!j.is_object()) err.record("expected a JSON object");
  switch (schema) {
    case Schema::stories:
      text_field(j, "prompt", err);
      text_field(j, "story", err);
      return;
    case Schema::books:
      text_field(j, "text", err);
      return;
    case Schema::synthetic:
      if (normalize_whitespace(text_field(j, "human", err)) ==
          normalize_whitespace(text_field(j, "machine", err))) {
        err.field("machine", "duplicates 'human'");
      }
      return;
    case Schema::ranking: {
      text_field(j, "context", err, true);
      const auto choices = j.find("choices");
      if (choices == j.end()) err.field("choices", "is missing");
      if (!choices->is_array()) err.field("choices", "must be an array of strings");
      if (choices->size() < 2) err.field("choices", "needs at least 2 entries");
      std::set<std::string> seen;
      for (const auto& c : *choices) {
        if (!c.is_string()) err.field("choices", "must be an array of strings");
        const std::string norm = normalize_whitespace(c.get<std::string>());
        if (norm.empty()) err.field("choices", "contains an empty choice");
        if (!seen.insert(norm).second) err.field("choices", "contains duplicate choice '" + norm + "'");
      }
      const auto idx = j.find("correct_index");
      if (idx == j.end()) err.field("correct_index", "is missing");
      if (!idx->is_number_integer()) err.field("correct_index", "must be an integer");
      const auto v = idx->get<std::int64_t>();
      if (v < 0 || static_cast<std::size_t>(v) >= choices->size()) {
        err.field("correct_index", "is out of range");
      }
      return;
    }
  }
}

RankingItem ranking_from_json(const json& j) {
  RankingItem item;
  item.context = normalize_whitespace(j.at("context").get<std::string>());
  for (const auto& c : j.at("choices")) item.choices.push_back(normalize_whitespace(c.get<std::string>()));
  item.correct_index = j.at("correct_index").get<std::size_t>();
  return item;
}

}  // namespace

std::string format_prompt_story(const StoryExample& ex) {
  return std::string(kPromptTag) + ex.prompt + separator_block() + std::string(kStoryTag) + ex.story;
}

std::string prompt_story_prefix(std::string_view prompt) {
  return std::string(kPromptTag) + std::string(prompt) + separator_block() + "Story:";
}

StoryExample parse_prompt_story(std::string_view text) {
  if (!text.starts_with(kPromptTag)) throw DataError("prompt-story text must start with 'Prompt: '");
  text.remove_prefix(kPromptTag.size());
  const std::string sep = separator_block();
  const auto at = text.find(sep);
  if (at == std::string_view::npos) throw DataError("prompt-story text has no separator line");
  StoryExample ex{std::string(text.substr(0, at)), {}};
  text.remove_prefix(at + sep.size());
  if (!text.starts_with(kStoryTag)) throw DataError("prompt-story text lacks 'Story: ' after the separator");
  ex.story = std::string(text.substr(kStoryTag.size()));
  return ex;
}

void RankingItem::validate() const {
  if (choices.size() < 2) throw DataError("ranking item needs at least 2 choices");
  if (correct_index >= choices.size()) throw DataError("ranking item correct_index out of range");
  std::set<std::string> seen;
  for (const auto& c : choices) {
    if (normalize_whitespace(c).empty()) throw DataError("ranking item has an empty choice");
    if (!seen.insert(normalize_whitespace(c)).second) {
      throw DataError("ranking item has duplicate choice '" + c + "'");
    }
  }
}

RankingItem SyntheticPair::to_ranking_item() const { return {"", {human, machine}, 0}; }

std::vector<json> load_jsonl(const std::filesystem::path& path, Schema schema) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset " + path.string());
  std::vector<json> records;
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    if (normalize_whitespace(line).empty()) continue;
    const RecordError err(path, n);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      err.record(std::string("malformed JSON: ") + e.what());
    }
    validate_record(j, schema, err);
    records.push_back(std::move(j));
  }
  return records;
}

std::vector<StoryExample> load_stories(const std::filesystem::path& path) {
  std::vector<StoryExample> out;
  for (const auto& j : load_jsonl(path, Schema::stories)) {
    out.push_back({normalize_whitespace(j.at("prompt").get<std::string>()),
                   normalize_whitespace(j.at("story").get<std::string>())});
  }
  return out;
}

std::vector<std::string> load_books(const std::filesystem::path& path) {
  std::vector<std::string> out;
  for (const auto& j : load_jsonl(path, Schema::books)) {
    out.push_back(normalize_whitespace(j.at("text").get<std::string>()));
  }
  return out;
}

std::vector<RankingItem> load_ranking(const std::filesystem::path& path) {
  std::vector<RankingItem> out;
  for (const auto& j : load_jsonl(path, Schema::ranking)) out.push_back(ranking_from_json(j));
  return out;
}

std::vector<RankingItem> load_synthetic(const std::filesystem::path& path) {
  std::vector<RankingItem> out;
  for (const auto& j : load_jsonl(path, Schema::synthetic)) {
    out.push_back(SyntheticPair{normalize_whitespace(j.at("human").get<std::string>()),
                                normalize_whitespace(j.at("machine").get<std::string>())}
                      .to_ranking_item());
  }
  return out;
}

json to_json(const StoryExample& ex) { return {{"prompt", ex.prompt}, {"story", ex.story}}; }

json to_json(const RankingItem& item) {
  return {{"context", item.context}, {"choices", item.choices}, {"correct_index", item.correct_index}};
}

json to_json(const SyntheticPair& pair) { return {{"human", pair.human}, {"machine", pair.machine}}; }

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  write_file(path, out);
}

PackedRanking pack_ranking_item(const RankingItem& item, const Vocab& vocab,
                                std::size_t max_seq_len) {
  item.validate();
  const TokenId bos = vocab.specials().bos;
  PackedRanking packed;
  packed.correct_index = item.correct_index;
  TokenSeq prefix{bos};
  if (!item.context.empty()) {
    const auto ctx = vocab.encode(item.context).token_ids;
    prefix.insert(prefix.end(), ctx.begin(), ctx.end());
  }
  packed.context_length = prefix.size();
  for (std::size_t i = 0; i < item.choices.size(); ++i) {
    const std::string text = item.context.empty() ? item.choices[i] : item.context + " " + item.choices[i];
    TokenSeq seq{bos};
    const auto enc = vocab.encode(text).token_ids;
    seq.insert(seq.end(), enc.begin(), enc.end());
    if (!std::equal(prefix.begin(), prefix.end(), seq.begin(), seq.begin() + std::min(prefix.size(), seq.size()))) {
      throw ContractError("pack_ranking_item: choice " + std::to_string(i) +
                          " does not extend the context tokens");
    }
    if (seq.size() > max_seq_len) seq.resize(max_seq_len);
    if (seq.size() <= packed.context_length) {
      throw DataError("ranking item: truncation to " + std::to_string(max_seq_len) +
                      " tokens removes every continuation token of choice " + std::to_string(i));
    }
    packed.sequences.push_back(std::move(seq));
  }
  return packed;
}

ScoredSequence lm_sequence(const Vocab& vocab, std::string_view text, std::size_t max_seq_len) {
  const Encoding enc = vocab.encode(text);
  ScoredSequence s;
  s.ids.reserve(enc.token_ids.size() + 2);
  s.ids.push_back(vocab.specials().bos);
  s.ids.insert(s.ids.end(), enc.token_ids.begin(), enc.token_ids.end());
  s.ids.push_back(vocab.specials().eos);
  s.word_starts = enc.word_starts;
  s.word_starts.push_back(false);
  if (s.ids.size() > max_seq_len) {
    s.ids.resize(max_seq_len);
    s.word_starts.resize(max_seq_len - 1);
  }
  return s;
}

Batch make_lm_batch(std::span<const TokenSeq> sequences, TokenId pad) {
  if (sequences.empty()) throw ContractError("make_lm_batch: no sequences");
  Batch b;
  for (const auto& s : sequences) b.width = std::max(b.width, s.size());
  for (const auto& s : sequences) {
    TokenSeq row(s);
    row.resize(b.width, pad);
    std::vector<bool> mask(b.width, false);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(s.size()), true);
    b.rows.push_back(std::move(row));
    b.mask.push_back(std::move(mask));
  }
  return b;
}

Tensor batch_lm_loss(Graph& g, const Model& model, const Batch& batch, const ForwardOptions& opts) {
  if (batch.rows.empty()) throw ContractError("batch_lm_loss: empty batch");
  std::vector<Tensor> losses;
  for (std::size_t r = 0; r < batch.rows.size(); ++r) {
    const TokenSeq& row = batch.rows[r];
    if (row.size() < 2) throw ContractError("batch_lm_loss: no predictable positions");
    TokenSeq targets(row.begin() + 1, row.end());
    for (std::size_t t = 0; t < targets.size(); ++t) {
      if (!batch.mask[r][t + 1]) targets[t] = -1;
    }
    Tensor logits = model.forward(g, std::span(row).first(row.size() - 1), opts);
    losses.push_back(g.cross_entropy(logits, targets, -1));
  }
  return g.mean(g.stack(losses));
}

EpochSampler::EpochSampler(std::size_t size, std::uint64_t seed, std::string stream)
    : size_(size), seed_(seed), stream_(std::move(stream)) {
  if (size_ == 0) throw ContractError("EpochSampler: empty dataset");
}

const std::vector<std::size_t>& EpochSampler::epoch_order(std::uint64_t epoch) {
  if (epoch != cached_epoch_) {
    order_.resize(size_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng = make_rng(seed_, stream_, {epoch});
    // Fisher-Yates with explicit modulo draws, independent of the standard
    // library's distribution implementations.
    for (std::size_t i = size_; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(order_[i - 1], order_[j]);
    }
    cached_epoch_ = epoch;
  }
  return order_;
}

std::vector<std::size_t> EpochSampler::batch(std::int64_t step, std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  for (std::size_t j = 0; j < batch_size; ++j) {
    const std::uint64_t pos = static_cast<std::uint64_t>(step) * batch_size + j;
    out.push_back(epoch_order(pos / size_)[pos % size_]);
  }
  return out;
}

}  // namespace storylab
