#include "storylab/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "storylab/error.hpp"

namespace storylab {

std::vector<double> ModelScorer::token_log_probs(std::span<const TokenId> ids) const {
  return sequence_log_probs(model_, ids);
}

void CompensatedSum::add(double x) {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x)) {
    compensation_ += (sum_ - t) + x;
  } else {
    compensation_ += (x - t) + sum_;
  }
  sum_ = t;
}

double PerplexityStats::subword_ppl() const {
  if (subwords == 0) throw ContractError("perplexity: empty corpus");
  return std::exp(total_nll / static_cast<double>(subwords));
}

double PerplexityStats::word_ppl() const {
  if (words == 0) throw ContractError("word perplexity: corpus has no words");
  return std::exp(total_nll / static_cast<double>(words));
}

PerplexityStats perplexity_stats(const SequenceScorer& scorer, std::span<const ScoredSequence> corpus) {
  if (corpus.empty()) throw ContractError("perplexity: empty corpus");
  std::vector<std::vector<double>> per_seq(corpus.size());
  const auto n = static_cast<std::int64_t>(corpus.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    per_seq[static_cast<std::size_t>(i)] = scorer.token_log_probs(corpus[static_cast<std::size_t>(i)].ids);
  }
  PerplexityStats stats;
  CompensatedSum nll;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& seq = corpus[i];
    if (seq.word_starts.size() != per_seq[i].size()) {
      throw ContractError("perplexity: word_starts must have one flag per predicted token");
    }
    for (double lp : per_seq[i]) nll.add(-lp);
    stats.subwords += per_seq[i].size();
    stats.words += static_cast<std::size_t>(std::count(seq.word_starts.begin(), seq.word_starts.end(), true));
  }
  stats.total_nll = nll.value();
  stats.sequences = corpus.size();
  return stats;
}

double subword_perplexity(const SequenceScorer& scorer, std::span<const ScoredSequence> corpus) {
  return perplexity_stats(scorer, corpus).subword_ppl();
}

double word_perplexity(const SequenceScorer& scorer, std::span<const ScoredSequence> corpus) {
  return perplexity_stats(scorer, corpus).word_ppl();
}

std::optional<std::size_t> strict_argmin(std::span<const double> values) {
  if (values.empty()) return std::nullopt;
  const auto it = std::min_element(values.begin(), values.end());
  if (std::count(values.begin(), values.end(), *it) > 1) return std::nullopt;
  return static_cast<std::size_t>(it - values.begin());
}

std::vector<double> choice_perplexities(const SequenceScorer& scorer, const PackedRanking& item,
                                        ScoreSpan span) {
  const std::size_t first = first_scored_token(item, span);
  std::vector<double> ppl;
  ppl.reserve(item.sequences.size());
  for (const auto& seq : item.sequences) {
    if (first >= seq.size()) throw ContractError("mc ranking: empty scored span");
    const auto lp = scorer.token_log_probs(seq);
    ppl.push_back(std::exp(-rank_score(std::span<const double>(lp).subspan(first - 1))));
  }
  return ppl;
}

Accuracy mc_ranking_accuracy(const SequenceScorer& scorer, std::span<const PackedRanking> items,
                             ScoreSpan span) {
  std::vector<char> hit(items.size(), 0);
  const auto n = static_cast<std::int64_t>(items.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& item = items[static_cast<std::size_t>(i)];
    const auto best = strict_argmin(choice_perplexities(scorer, item, span));
    hit[static_cast<std::size_t>(i)] = best && *best == item.correct_index;
  }
  return {static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1)), items.size()};
}

std::pair<TokenSeq, std::size_t> pack_conditional_story(const Vocab& vocab, std::string_view prompt,
                                                        std::string_view story,
                                                        std::size_t max_seq_len) {
  TokenSeq ids{vocab.specials().bos};
  const auto prefix = vocab.encode(prompt_story_prefix(prompt)).token_ids;
  ids.insert(ids.end(), prefix.begin(), prefix.end());
  const std::size_t first = ids.size();
  const auto full = vocab.encode(format_prompt_story({std::string(prompt), std::string(story)})).token_ids;
  if (full.size() < prefix.size() || !std::equal(prefix.begin(), prefix.end(), full.begin())) {
    throw ContractError("prompt ranking: story encoding does not extend the prompt prefix");
  }
  ids.insert(ids.end(), full.begin() + static_cast<std::ptrdiff_t>(prefix.size()), full.end());
  ids.push_back(vocab.specials().eos);
  if (ids.size() > max_seq_len) ids.resize(max_seq_len);
  if (ids.size() <= first) throw DataError("prompt ranking: prompt leaves no room for story tokens");
  return {std::move(ids), first};
}

Accuracy prompt_ranking(const SequenceScorer& scorer, const Vocab& vocab,
                        std::span<const StoryExample> stories, const PromptRankingOptions& opts,
                        std::size_t max_seq_len) {
  std::vector<std::string> prompts;
  std::unordered_map<std::string, std::size_t> prompt_index;
  std::vector<std::size_t> story_prompt;
  for (const auto& s : stories) {
    auto [it, inserted] = prompt_index.emplace(s.prompt, prompts.size());
    if (inserted) prompts.push_back(s.prompt);
    story_prompt.push_back(it->second);
  }
  if (prompts.size() <= opts.n_distractors) {
    throw DataError("prompt ranking: " + std::to_string(prompts.size()) +
                    " distinct prompts cannot supply " + std::to_string(opts.n_distractors) +
                    " distractors");
  }
  if (opts.n_samples == 0) throw ContractError("prompt ranking: n_samples must be positive");

  // Draw every (story, candidate prompts) trial first, then score in parallel.
  EpochSampler order(stories.size(), opts.seed, "prompt_ranking");
  Rng rng = make_rng(opts.seed, "prompt_distractors");
  struct Trial {
    std::size_t story;
    std::vector<std::size_t> candidates;  // candidates[0] is the true prompt
  };
  std::vector<Trial> trials;
  for (std::size_t i = 0; i < opts.n_samples; ++i) {
    Trial t{order.batch(static_cast<std::int64_t>(i), 1)[0], {}};
    t.candidates.push_back(story_prompt[t.story]);
    while (t.candidates.size() < opts.n_distractors + 1) {
      const std::size_t p = static_cast<std::size_t>(rng() % prompts.size());
      if (std::find(t.candidates.begin(), t.candidates.end(), p) == t.candidates.end()) {
        t.candidates.push_back(p);
      }
    }
    trials.push_back(std::move(t));
  }

  std::vector<char> hit(trials.size(), 0);
  const auto n = static_cast<std::int64_t>(trials.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    const Trial& t = trials[static_cast<std::size_t>(i)];
    std::vector<double> ppl;
    for (std::size_t p : t.candidates) {
      const auto [ids, first] = pack_conditional_story(vocab, prompts[p], stories[t.story].story, max_seq_len);
      const auto lp = scorer.token_log_probs(ids);
      ppl.push_back(std::exp(-rank_score(std::span<const double>(lp).subspan(first - 1))));
    }
    const auto best = strict_argmin(ppl);
    hit[static_cast<std::size_t>(i)] = best && *best == 0;
  }
  return {static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1)), trials.size()};
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json mc_json = nlohmann::json::object();
  for (const auto& [name, acc] : mc) {
    mc_json[name] = {{"accuracy", acc.value()}, {"correct", acc.correct}, {"count", acc.count}};
  }
  return {{"subword_ppl", perplexity.subword_ppl()},
          {"word_ppl", perplexity.word_ppl()},
          {"subword_count", perplexity.subwords},
          {"word_count", perplexity.words},
          {"sequence_count", perplexity.sequences},
          {"prompt_ranking",
           {{"accuracy", prompt_ranking.value()},
            {"correct", prompt_ranking.correct},
            {"count", prompt_ranking.count}}},
          {"mc_accuracies", mc_json},
          {"metadata", metadata}};
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17) << "dataset,metric,value,count\n";
  os << "stories,subword_ppl," << perplexity.subword_ppl() << ',' << perplexity.subwords << '\n';
  os << "stories,word_ppl," << perplexity.word_ppl() << ',' << perplexity.words << '\n';
  os << "stories,prompt_ranking," << prompt_ranking.value() << ',' << prompt_ranking.count << '\n';
  for (const auto& [set, acc] : mc) os << set << ",mc_accuracy," << acc.value() << ',' << acc.count << '\n';
  return os.str();
}

}  // namespace storylab
