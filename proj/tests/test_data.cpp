#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "storylab/data.hpp"
#include "storylab/error.hpp"
#include "storylab/fixtures.hpp"
#include "storylab/objectives.hpp"
#include "storylab/tokenizer.hpp"

using namespace storylab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path write(const std::string& file, const std::string& text) const {
    std::ofstream(path / file) << text;
    return path / file;
  }
};

const FixtureSet& fixtures() {
  static const FixtureSet set = make_fixtures(5, FixtureSizes{30, 30, 20, 20, 10, 20, 20});
  return set;
}

const Vocab& vocab() {
  static const Vocab v = [] {
    std::vector<std::string> corpus;
    for (const auto& s : fixtures().stories) corpus.push_back(format_prompt_story(s));
    for (const auto& b : fixtures().books) corpus.push_back(b);
    for (const auto& r : fixtures().ranking) {
      corpus.push_back(r.context);
      for (const auto& c : r.choices) corpus.push_back(c);
    }
    corpus.push_back("Aliens abducting humans. Steve smashed... 0123456789");
    return train_bpe(corpus, 200);
  }();
  return v;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("prompt-story template") {
  const StoryExample ex{"Aliens start abducting humans.", "Steve smashed..."};
  CHECK(format_prompt_story(ex) == "Prompt: Aliens start abducting humans.\n<SEP>\nStory: Steve smashed...");
  CHECK(parse_prompt_story(format_prompt_story(ex)) == ex);
  CHECK(prompt_story_prefix(ex.prompt) == "Prompt: Aliens start abducting humans.\n<SEP>\nStory:");
  CHECK(format_prompt_story(ex).starts_with(kPromptLead));
}

TEST_CASE("template round-trips fixtures and adversarial prompts") {
  for (const auto& s : fixtures().stories) CHECK(parse_prompt_story(format_prompt_story(s)) == s);
  const StoryExample tricky{"Write a line with Story: inside\nand Prompt: too", "Story: again"};
  CHECK(parse_prompt_story(format_prompt_story(tricky)) == tricky);
  CHECK_THROWS_AS(parse_prompt_story("Prompt: x\nStory: y"), DataError);
}

TEST_CASE("ranking item validation") {
  RankingItem ok{"ctx", {"a", "b"}, 1};
  CHECK_NOTHROW(ok.validate());
  CHECK_THROWS_AS((RankingItem{"ctx", {"a"}, 0}).validate(), DataError);
  CHECK_THROWS_AS((RankingItem{"ctx", {"a", "a"}, 0}).validate(), DataError);
  CHECK_THROWS_AS((RankingItem{"ctx", {"a", ""}, 0}).validate(), DataError);
  CHECK_THROWS_AS((RankingItem{"ctx", {"a", "b"}, 2}).validate(), DataError);
  const RankingItem pair = SyntheticPair{"human text", "machine text"}.to_ranking_item();
  CHECK(pair == RankingItem{"", {"human text", "machine text"}, 0});
}

TEST_CASE("jsonl loading") {
  TempDir dir("storylab_data_jsonl");
  const auto good = dir.write("r.jsonl",
                              "{\"context\":\"c\",\"choices\":[\"a\",\"b\"],\"correct_index\":0}\n"
                              "\n"
                              "{\"context\":\"c\",\"choices\":[\"a\",\"b\",\"d\"],\"correct_index\":2}\n"
                              "{\"context\":\"\",\"choices\":[\"x  y\",\"z\"],\"correct_index\":1}\n");
  const auto items = load_ranking(good);
  REQUIRE(items.size() == 3);
  CHECK(items[1].correct_index == 2);
  CHECK(items[2].choices[0] == "x y");

  const auto missing = dir.write("m.jsonl",
                                 "{\"context\":\"c\",\"choices\":[\"a\",\"b\"],\"correct_index\":0}\n"
                                 "{\"context\":\"c\",\"choices\":[\"a\",\"b\"]}\n");
  const std::string msg = message_of([&] { load_ranking(missing); });
  CHECK(msg.find(":2:") != std::string::npos);
  CHECK(msg.find("correct_index") != std::string::npos);
  CHECK_THROWS_AS(load_ranking(missing), DataError);

  const auto dup = dir.write("d.jsonl", "{\"context\":\"c\",\"choices\":[\"a\",\"a\"],\"correct_index\":0}\n");
  CHECK_THROWS_AS(load_ranking(dup), DataError);

  const auto malformed = dir.write("bad.jsonl", "{\"text\":\"ok\"}\n{\"text\": oops}\n");
  CHECK(message_of([&] { load_books(malformed); }).find(":2") != std::string::npos);
  CHECK_THROWS_AS(load_books(malformed), DataError);

  CHECK_THROWS_AS(load_books(dir.path / "nope.jsonl"), IoError);

  const auto stories = dir.write("s.jsonl", "{\"prompt\":\"p\",\"story\":\"  \"}\n");
  CHECK_THROWS_AS(load_stories(stories), DataError);

  const auto synth = dir.write("y.jsonl", "{\"human\":\"h\",\"machine\":\"m\"}\n");
  CHECK(load_synthetic(synth).front() == RankingItem{"", {"h", "m"}, 0});
}

TEST_CASE("write then load preserves records") {
  TempDir dir("storylab_data_roundtrip");
  std::vector<nlohmann::json> recs;
  for (const auto& r : fixtures().ranking) recs.push_back(to_json(r));
  write_jsonl(dir.path / "r.jsonl", recs);
  CHECK(load_ranking(dir.path / "r.jsonl") == fixtures().ranking);
}

TEST_CASE("packing shares the context prefix") {
  const Vocab& v = vocab();
  for (const auto& item : fixtures().ranking) {
    const PackedRanking p = pack_ranking_item(item, v, 256);
    REQUIRE(p.sequences.size() == item.choices.size());
    CHECK(p.correct_index == item.correct_index);
    const Encoding ctx = v.encode(item.context);
    CHECK(p.context_length == 1 + ctx.token_ids.size());
    for (std::size_t i = 0; i < p.sequences.size(); ++i) {
      const TokenSeq& s = p.sequences[i];
      CHECK(s.front() == v.specials().bos);
      CHECK(TokenSeq(s.begin() + 1, s.begin() + static_cast<std::ptrdiff_t>(p.context_length)) == ctx.token_ids);
      CHECK(v.decode(std::span(s).subspan(1)) == item.context + " " + item.choices[i]);
    }
  }
}

TEST_CASE("empty context packs standalone encodings") {
  const Vocab& v = vocab();
  const RankingItem item = fixtures().synthetic.front().to_ranking_item();
  const PackedRanking p = pack_ranking_item(item, v, 256);
  REQUIRE(p.sequences.size() == 2);
  CHECK(p.context_length == 1);
  for (std::size_t i = 0; i < 2; ++i) CHECK(v.decode(std::span(p.sequences[i]).subspan(1)) == item.choices[i]);
}

TEST_CASE("over-length choices truncate to max_seq_len and lost continuations are rejected") {
  const Vocab& v = vocab();
  const RankingItem item{"Ben was lost.", {"Ben asked for help and then walked to the harbor.", "Ben sang."}, 0};
  const std::size_t ctx = 1 + v.encode(item.context).token_ids.size();
  const PackedRanking p = pack_ranking_item(item, v, ctx + 2);
  CHECK(p.sequences[0].size() == ctx + 2);
  CHECK(p.sequences[1].size() <= ctx + 2);
  CHECK_THROWS_AS(pack_ranking_item(item, v, ctx), DataError);
}

TEST_CASE("lm sequences carry word starts for predicted tokens") {
  const Vocab& v = vocab();
  const std::string text = fixtures().books.front();
  const ScoredSequence s = lm_sequence(v, text, 1000);
  CHECK(s.ids.front() == v.specials().bos);
  CHECK(s.ids.back() == v.specials().eos);
  REQUIRE(s.word_starts.size() == s.ids.size() - 1);
  CHECK(std::count(s.word_starts.begin(), s.word_starts.end(), true) == static_cast<long>(count_words(text)));
  CHECK_FALSE(s.word_starts.back());
  const ScoredSequence cut = lm_sequence(v, text, 8);
  CHECK(cut.ids.size() == 8);
  CHECK(cut.word_starts.size() == 7);
}

TEST_CASE("padded batch loss equals the mean of unpadded losses") {
  const Vocab& v = vocab();
  ModelSpec spec;
  spec.vocab_size = v.size();
  spec.d_model = 16;
  spec.n_layers = 1;
  spec.n_heads = 2;
  spec.d_ff = 32;
  spec.max_seq_len = 64;
  const Model m = Model::init(spec, 3);
  std::vector<TokenSeq> seqs;
  for (std::size_t i = 0; i < 4; ++i) seqs.push_back(lm_sequence(v, fixtures().books[i], 40 - 7 * i).ids);
  const Batch b = make_lm_batch(seqs, v.specials().pad);
  REQUIRE(b.rows.size() == 4);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(b.rows[r].size() == b.width);
    for (std::size_t t = 0; t < b.width; ++t) {
      CHECK(b.mask[r][t] == (t < seqs[r].size()));
      if (!b.mask[r][t]) CHECK(b.rows[r][t] == v.specials().pad);
    }
  }
  Graph g(false);
  double mean = 0.0;
  for (const auto& s : seqs) mean += lm_loss(g, m, s).item() / 4.0;
  CHECK(std::abs(batch_lm_loss(g, m, b).item() - mean) <= 1e-10);
}

TEST_CASE("epoch sampler") {
  EpochSampler a(10, 7, "lm"), b(10, 7, "lm"), c(10, 8, "lm");
  std::vector<std::size_t> order = a.epoch_order(0);
  CHECK(std::set<std::size_t>(order.begin(), order.end()).size() == 10);
  CHECK(b.epoch_order(0) == order);
  CHECK(c.epoch_order(0) != order);
  CHECK(a.epoch_order(1) != order);
  // Step 3 with batch 4 spans the end of epoch 1 and the start of epoch 2.
  const auto late = a.batch(3, 4);
  EpochSampler fresh(10, 7, "lm");
  CHECK(fresh.batch(3, 4) == late);
  const auto& e1 = fresh.epoch_order(1);
  const std::vector<std::size_t> expect{e1[2], e1[3], e1[4], e1[5]};
  CHECK(late == expect);
  CHECK_THROWS_AS(EpochSampler(0, 1, "x"), ContractError);
}

TEST_CASE("fixtures are deterministic and well formed") {
  const FixtureSet a = make_fixtures(9), b = make_fixtures(9), c = make_fixtures(10);
  CHECK(a.stories == b.stories);
  CHECK(a.ranking == b.ranking);
  CHECK(a.stories != c.stories);
  CHECK(a.stories.size() == 200);
  CHECK(a.ranking.size() == 100);
  CHECK(a.synthetic.size() == 100);
  for (const auto& r : a.ranking) CHECK_NOTHROW(r.validate());
  for (const auto& r : a.ranking_valid) CHECK_NOTHROW(r.validate());
  std::set<std::string> prompts;
  for (const auto& s : a.stories_valid) prompts.insert(s.prompt);
  CHECK(prompts.size() > 9);  // enough for nine distractors
}

TEST_CASE("fixture files load back") {
  TempDir dir("storylab_data_fixtures");
  const FixtureSet& f = fixtures();
  write_fixtures(dir.path, f);
  CHECK(load_stories(dir.path / FixtureFiles::stories) == f.stories);
  CHECK(load_books(dir.path / FixtureFiles::books) == f.books);
  CHECK(load_ranking(dir.path / FixtureFiles::cloze_valid) == f.cloze_valid);
  CHECK(load_synthetic(dir.path / FixtureFiles::synthetic).size() == f.synthetic.size());
}
