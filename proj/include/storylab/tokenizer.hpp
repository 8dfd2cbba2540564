#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "storylab/types.hpp"

namespace storylab {

struct SpecialTokens {
  TokenId pad = 0;
  TokenId bos = 1;
  TokenId eos = 2;
  TokenId sep = 3;
};

inline constexpr std::string_view kPadText = "<pad>";
inline constexpr std::string_view kBosText = "<bos>";
inline constexpr std::string_view kEosText = "<eos>";
inline constexpr std::string_view kSepText = "<SEP>";

struct Encoding {
  TokenSeq token_ids;
  // True where a token begins a whitespace-delimited word.
  std::vector<bool> word_starts;
};

/// Character-level byte-pair-encoding vocabulary.
///
/// Words are maximal runs of non-whitespace characters. A single space in
/// front of a word is folded into the word's first token: every piece exists
/// in a plain form ("ab") and a space-prefixed form (" ab"), and merge rules
/// are keyed on the plain text so ("a","b") applies to both. Any other
/// whitespace (newlines, runs of spaces) is spelled out as one token per
/// character. Special tokens are matched on their surface text before
/// splitting.
class Vocab {
 public:
  Encoding encode(std::string_view text) const;
  // Inverse of encode on its image; unknown ids raise IndexError.
  std::string decode(std::span<const TokenId> ids) const;

  std::size_t size() const noexcept { return pieces_.size(); }
  const std::vector<std::string>& pieces() const noexcept { return pieces_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const noexcept {
    return merge_text_;
  }
  const SpecialTokens& specials() const noexcept { return specials_; }
  std::size_t base_size() const noexcept { return base_size_; }

  std::string_view piece(TokenId id) const;
  std::optional<TokenId> find(std::string_view piece) const;

  std::string to_json() const;
  static Vocab from_json(std::string_view json);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);
  // Stable content hash recorded in checkpoints.
  std::string hash() const;

 private:
  friend Vocab train_bpe(std::span<const std::string> corpus, std::size_t target_vocab_size);

  struct Merge {
    int left = 0;
    int right = 0;
    int result = 0;
  };

  int core_id(const std::string& core);
  std::optional<int> find_core(std::string_view core) const;
  TokenId add_piece(int core, bool prefixed);
  TokenId variant(int core, bool prefixed) const;
  void encode_word(std::string_view word, bool prefixed, TokenSeq& out) const;
  void rebuild_indexes();

  std::vector<std::string> pieces_;
  std::unordered_map<std::string, TokenId> piece_ids_;
  std::vector<std::pair<std::string, std::string>> merge_text_;
  SpecialTokens specials_;
  std::size_t base_size_ = 0;

  // Plain piece text ("core") tables used by encoding.
  std::vector<std::string> cores_;
  std::unordered_map<std::string, int> core_ids_;
  std::vector<TokenId> plain_ids_;
  std::vector<TokenId> prefixed_ids_;
  std::vector<Merge> merge_rules_;
  std::unordered_map<std::uint64_t, int> merge_rank_;
};

/// Learns merges until the vocabulary holds exactly target_vocab_size pieces
/// (specials + base symbols + merged pieces). Pairs are chosen by descending
/// frequency with lexicographic tie-break.
Vocab train_bpe(std::span<const std::string> corpus, std::size_t target_vocab_size);

std::size_t count_words(std::string_view text);
std::string normalize_whitespace(std::string_view text);

}  // namespace storylab
