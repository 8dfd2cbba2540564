#include "storylab/fixtures.hpp"

#include <algorithm>
#include <array>
#include <string_view>

#include "storylab/error.hpp"
#include "storylab/rng.hpp"

namespace storylab {
namespace {

constexpr std::array<std::string_view, 16> kNames{
    "Anna", "Ben", "Cara", "Dan", "Emma", "Finn", "Gina", "Hugo",
    "Ivy",  "Jack", "Kate", "Leo", "Mia", "Noah", "Olga", "Paul"};
// Names [0, kTrainNames) appear in ranking training data; the rest are held out.
constexpr std::size_t kTrainNames = 10;

constexpr std::array<std::string_view, 8> kPlaces{"park",   "market", "river",   "school",
                                                  "garden", "harbor", "library", "forest"};
constexpr std::array<std::string_view, 8> kNouns{"sky", "dog", "road", "house",
                                                 "lamp", "door", "tree", "cat"};
constexpr std::array<std::string_view, 8> kAdjectives{"grey", "loud", "long",  "quiet",
                                                      "bright", "wet", "old", "small"};

struct Relation {
  std::string_view state;
  std::string_view action;
};
constexpr std::array<Relation, 8> kRelations{{{"hungry", "ate some bread"},
                                              {"thirsty", "drank some water"},
                                              {"tired", "went to bed"},
                                              {"cold", "lit a fire"},
                                              {"dirty", "took a bath"},
                                              {"bored", "read a book"},
                                              {"sick", "saw a doctor"},
                                              {"lost", "asked for help"}}};

class World {
 public:
  explicit World(Rng rng) : rng_(std::move(rng)) {}

  std::size_t pick(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }
  template <class A>
  std::string_view any(const A& a) {
    return a[pick(a.size())];
  }

  std::string filler() {
    switch (pick(3)) {
      case 0: return "The " + std::string(any(kNouns)) + " was " + std::string(any(kAdjectives)) + ".";
      case 1: return "It was a " + std::string(any(kAdjectives)) + " day .";
      default: return "There was a " + std::string(any(kAdjectives)) + " " + std::string(any(kNouns)) + ".";
    }
  }

  // Sentences about one person. A state sentence is always followed by a
  // filler sentence and states and actions are drawn independently.
  std::string narrative(std::string_view name, std::string_view place, std::size_t events) {
    std::string out = std::string(name) + " walked to the " + std::string(place) + ".";
    for (std::size_t e = 0; e < events; ++e) {
      switch (pick(3)) {
        case 0:
          out += " " + std::string(name) + " was " + std::string(kRelations[pick(8)].state) + ". " + filler();
          break;
        case 1:
          out += " " + std::string(name) + " " + std::string(kRelations[pick(8)].action) + ".";
          break;
        default:
          out += " " + filler();
      }
    }
    out += " Then " + std::string(name) + " went home from the " + std::string(place) + ".";
    return out;
  }

  StoryExample story() {
    const auto name = any(kNames);
    const auto place = any(kPlaces);
    return {"A story about " + std::string(name) + " at the " + std::string(place),
            narrative(name, place, 3 + pick(3))};
  }

  std::string book_line() {
    const auto name = any(kNames);
    return narrative(name, any(kPlaces), 1 + pick(3));
  }

  static std::string context(std::string_view name, std::size_t rel) {
    return std::string(name) + " was " + std::string(kRelations[rel].state) + ".";
  }
  static std::string choice(std::string_view name, std::size_t rel) {
    return std::string(name) + " " + std::string(kRelations[rel].action) + ".";
  }

  // n_choices-way item: the fitting action plus actions of other states.
  RankingItem ranking(std::size_t first_name, std::size_t n_names, std::size_t n_choices) {
    const auto name = kNames[first_name + pick(n_names)];
    const std::size_t rel = pick(kRelations.size());
    std::vector<std::size_t> rels{rel};
    while (rels.size() < n_choices) {
      const std::size_t r = pick(kRelations.size());
      if (std::find(rels.begin(), rels.end(), r) == rels.end()) rels.push_back(r);
    }
    const std::size_t correct = pick(n_choices);
    std::swap(rels[0], rels[correct]);
    RankingItem item{context(name, rel), {}, correct};
    for (std::size_t r : rels) item.choices.push_back(choice(name, r));
    return item;
  }

  SyntheticPair synthetic() {
    const auto name = kNames[pick(kTrainNames)];
    const std::size_t rel = pick(kRelations.size());
    std::size_t wrong = pick(kRelations.size() - 1);
    if (wrong >= rel) ++wrong;
    return {context(name, rel) + " " + choice(name, rel), context(name, rel) + " " + choice(name, wrong)};
  }

 private:
  Rng rng_;
};

}  // namespace

FixtureSet make_fixtures(std::uint64_t seed, const FixtureSizes& sizes) {
  World w(make_rng(seed, "fixture"));
  FixtureSet set;
  for (std::size_t i = 0; i < sizes.stories; ++i) set.stories.push_back(w.story());
  for (std::size_t i = 0; i < sizes.books; ++i) set.books.push_back(w.book_line());
  for (std::size_t i = 0; i < sizes.ranking; ++i) set.ranking.push_back(w.ranking(0, kTrainNames, 4));
  for (std::size_t i = 0; i < sizes.synthetic; ++i) set.synthetic.push_back(w.synthetic());
  for (std::size_t i = 0; i < sizes.stories_valid; ++i) set.stories_valid.push_back(w.story());
  const std::size_t held_out = kNames.size() - kTrainNames;
  for (std::size_t i = 0; i < sizes.ranking_valid; ++i) {
    set.ranking_valid.push_back(w.ranking(kTrainNames, held_out, 4));
  }
  for (std::size_t i = 0; i < sizes.cloze_valid; ++i) {
    set.cloze_valid.push_back(w.ranking(kTrainNames, held_out, 2));
  }
  return set;
}

void write_fixtures(const std::filesystem::path& dir, const FixtureSet& set) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create fixture directory " + dir.string() + ": " + ec.message());
  auto dump = [&](const char* name, const auto& items) {
    std::vector<nlohmann::json> records;
    for (const auto& x : items) records.push_back(to_json(x));
    write_jsonl(dir / name, records);
  };
  dump(FixtureFiles::stories, set.stories);
  std::vector<nlohmann::json> books;
  for (const auto& b : set.books) books.push_back({{"text", b}});
  write_jsonl(dir / FixtureFiles::books, books);
  dump(FixtureFiles::ranking, set.ranking);
  dump(FixtureFiles::synthetic, set.synthetic);
  dump(FixtureFiles::stories_valid, set.stories_valid);
  dump(FixtureFiles::ranking_valid, set.ranking_valid);
  dump(FixtureFiles::cloze_valid, set.cloze_valid);
}

}  // namespace storylab
