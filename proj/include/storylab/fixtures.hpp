#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "storylab/data.hpp"

namespace storylab {

/// Line counts of the generated dataset files.
struct FixtureSizes {
  std::size_t stories = 200;
  std::size_t books = 500;
  std::size_t ranking = 100;
  std::size_t synthetic = 100;
  std::size_t stories_valid = 40;
  std::size_t ranking_valid = 100;
  std::size_t cloze_valid = 100;
};

/// Miniature world of people, places, states and the action that fits each
/// state. Stories and book text mention states and actions independently of
/// each other, so the state -> action regularity is visible only through the
/// ranking data. Validation ranking items use names that never occur in
/// ranking training data.
struct FixtureSet {
  std::vector<StoryExample> stories;
  std::vector<std::string> books;
  std::vector<RankingItem> ranking;
  std::vector<SyntheticPair> synthetic;
  std::vector<StoryExample> stories_valid;
  std::vector<RankingItem> ranking_valid;
  std::vector<RankingItem> cloze_valid;
};

FixtureSet make_fixtures(std::uint64_t seed, const FixtureSizes& sizes = {});

/// File names inside a fixture directory.
struct FixtureFiles {
  static constexpr const char* stories = "stories.jsonl";
  static constexpr const char* books = "books.jsonl";
  static constexpr const char* ranking = "ranking.jsonl";
  static constexpr const char* synthetic = "synthetic.jsonl";
  static constexpr const char* stories_valid = "stories_valid.jsonl";
  static constexpr const char* ranking_valid = "ranking_valid.jsonl";
  static constexpr const char* cloze_valid = "cloze_valid.jsonl";
};

void write_fixtures(const std::filesystem::path& dir, const FixtureSet& set);

}  // namespace storylab
