#include "storylab/pipeline.hpp"

#include "storylab/checkpoint.hpp"
#include "storylab/error.hpp"
#include "storylab/rng.hpp"

namespace storylab {
namespace {

template <class F>
auto load_if_present(const std::filesystem::path& path, F loader) -> decltype(loader(path)) {
  if (!std::filesystem::exists(path)) return {};
  return loader(path);
}

}  // namespace

Datasets Datasets::load(const RunConfig& cfg) {
  if (!std::filesystem::is_directory(cfg.data_dir)) {
    throw IoError("data directory not found: " + cfg.data_dir);
  }
  Datasets d;
  d.stories = load_stories(cfg.data_file(FixtureFiles::stories));
  d.books = load_if_present(cfg.data_file(FixtureFiles::books), load_books);
  d.ranking = load_if_present(cfg.data_file(FixtureFiles::ranking), load_ranking);
  d.synthetic = load_if_present(cfg.data_file(FixtureFiles::synthetic), load_synthetic);
  d.stories_valid = load_if_present(cfg.data_file(FixtureFiles::stories_valid), load_stories);
  d.ranking_valid = load_if_present(cfg.data_file(FixtureFiles::ranking_valid), load_ranking);
  d.cloze_valid = load_if_present(cfg.data_file(FixtureFiles::cloze_valid), load_ranking);
  return d;
}

Datasets Datasets::from_fixtures(const FixtureSet& set) {
  Datasets d{set.stories, set.books, set.ranking, {}, set.stories_valid, set.ranking_valid, set.cloze_valid};
  for (const auto& p : set.synthetic) d.synthetic.push_back(p.to_ranking_item());
  return d;
}

std::vector<std::string> tokenizer_corpus(const Datasets& data) {
  std::vector<std::string> corpus;
  for (const auto& s : data.stories) corpus.push_back(format_prompt_story(s));
  corpus.insert(corpus.end(), data.books.begin(), data.books.end());
  return corpus;
}

std::vector<ScoredSequence> story_sequences(const Vocab& vocab, const std::vector<StoryExample>& stories,
                                            std::size_t max_seq_len) {
  std::vector<ScoredSequence> out;
  for (const auto& s : stories) out.push_back(lm_sequence(vocab, format_prompt_story(s), max_seq_len));
  return out;
}

std::vector<PackedRanking> pack_all(const Vocab& vocab, const std::vector<RankingItem>& items,
                                    std::size_t max_seq_len) {
  std::vector<PackedRanking> out;
  for (const auto& item : items) out.push_back(pack_ranking_item(item, vocab, max_seq_len));
  return out;
}

TrainingData stage1_data(const Vocab& vocab, const Datasets& data, std::size_t max_seq_len) {
  if (data.books.empty()) throw DataError("stage 1 needs book text (books.jsonl)");
  TrainingData t;
  for (const auto& b : data.books) t.lm.push_back(lm_sequence(vocab, b, max_seq_len).ids);
  t.valid = story_sequences(vocab, data.stories_valid, max_seq_len);
  return t;
}

TrainingData stage2_data(const Vocab& vocab, const Datasets& data, std::size_t max_seq_len) {
  TrainingData t;
  for (auto& s : story_sequences(vocab, data.stories, max_seq_len)) t.lm.push_back(std::move(s.ids));
  t.valid = story_sequences(vocab, data.stories_valid, max_seq_len);
  t.synthetic = pack_all(vocab, data.synthetic, max_seq_len);
  t.swag = pack_all(vocab, data.ranking, max_seq_len);
  return t;
}

EvalReport evaluate(const Model& model, const Vocab& vocab, const Datasets& data, const RunConfig& cfg) {
  if (data.stories_valid.empty()) throw DataError("evaluation needs validation stories");
  const std::size_t T = model.spec().max_seq_len;
  const ModelScorer scorer(model);
  const ScoreSpan span{cfg.include_context};
  EvalReport r;
  r.perplexity = perplexity_stats(scorer, story_sequences(vocab, data.stories_valid, T));
  r.prompt_ranking = prompt_ranking(scorer, vocab, data.stories_valid,
                                    {cfg.eval.n_distractors, cfg.eval.prompt_samples, cfg.seed}, T);
  if (!data.ranking_valid.empty()) {
    r.mc["swag"] = mc_ranking_accuracy(scorer, pack_all(vocab, data.ranking_valid, T), span);
  }
  if (!data.cloze_valid.empty()) {
    r.mc["cloze"] = mc_ranking_accuracy(scorer, pack_all(vocab, data.cloze_valid, T), span);
  }
  r.metadata = {{"seed", cfg.seed},
                {"tokenizer_hash", vocab.hash()},
                {"perplexity_pooling", "token-weighted over the corpus"},
                {"word_definition", "maximal run of non-whitespace characters"},
                {"ranking_scores_context", cfg.include_context},
                {"ties", "counted incorrect"}};
  return r;
}

}  // namespace storylab
