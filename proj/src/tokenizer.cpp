#include "storylab/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <climits>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "storylab/error.hpp"
#include "storylab/rng.hpp"

namespace storylab {
namespace {

using json = nlohmann::json;

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::uint64_t pair_key(int left, int right) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) |
         static_cast<std::uint32_t>(right);
}

std::string describe_char(char c) {
  std::ostringstream os;
  os << "character ";
  if (std::isprint(static_cast<unsigned char>(c))) os << "'" << c << "' ";
  os << "(byte 0x" << std::hex << static_cast<int>(static_cast<unsigned char>(c)) << ")";
  return os.str();
}

struct Segment {
  enum class Kind { word, space, special };
  Kind kind = Kind::word;
  std::string_view text;
  bool prefixed = false;
  bool word_start = false;
  TokenId special = -1;
};

constexpr std::array<std::pair<std::string_view, int>, 4> kSpecialSurfaces{{
    {kPadText, 0}, {kBosText, 1}, {kEosText, 2}, {kSepText, 3}}};

TokenId special_at(std::string_view text, std::size_t pos, const SpecialTokens& sp) {
  if (text[pos] != '<') return -1;
  const std::array<TokenId, 4> ids{sp.pad, sp.bos, sp.eos, sp.sep};
  for (const auto& [surface, slot] : kSpecialSurfaces) {
    if (text.substr(pos).starts_with(surface)) return ids[static_cast<std::size_t>(slot)];
  }
  return -1;
}

std::vector<Segment> split_segments(std::string_view text, const SpecialTokens& sp,
                                    const std::vector<std::string>& pieces) {
  std::vector<Segment> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  bool after_space = true;
  bool pending_prefix = false;
  while (i < n) {
    if (const TokenId special = special_at(text, i, sp); special >= 0) {
      const auto len = pieces[static_cast<std::size_t>(special)].size();
      out.push_back({Segment::Kind::special, text.substr(i, len), false, after_space, special});
      after_space = false;
      i += len;
      continue;
    }
    if (is_space(text[i])) {
      std::size_t j = i;
      while (j < n && is_space(text[j])) ++j;
      const bool word_follows = j < n && special_at(text, j, sp) < 0;
      if (j - i == 1 && text[i] == ' ' && word_follows) {
        pending_prefix = true;
      } else {
        for (std::size_t c = i; c < j; ++c) {
          out.push_back({Segment::Kind::space, text.substr(c, 1), false, false, -1});
        }
      }
      after_space = true;
      i = j;
      continue;
    }
    std::size_t j = i;
    while (j < n && !is_space(text[j]) && special_at(text, j, sp) < 0) ++j;
    out.push_back({Segment::Kind::word, text.substr(i, j - i), pending_prefix, after_space, -1});
    pending_prefix = false;
    after_space = false;
    i = j;
  }
  return out;
}

struct TrainWord {
  std::vector<int> symbols;
  bool prefixed = false;
  std::int64_t count = 0;
};

}  // namespace

std::size_t count_words(std::string_view text) {
  std::size_t words = 0;
  bool in_word = false;
  for (char c : text) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++words;
    }
  }
  return words;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  bool in_word = false;
  for (char c : text) {
    if (is_space(c)) {
      in_word = false;
      continue;
    }
    if (!in_word && !out.empty()) out += ' ';
    in_word = true;
    out += c;
  }
  return out;
}

int Vocab::core_id(const std::string& core) {
  if (auto it = core_ids_.find(core); it != core_ids_.end()) return it->second;
  const int id = static_cast<int>(cores_.size());
  cores_.push_back(core);
  core_ids_.emplace(core, id);
  plain_ids_.push_back(-1);
  prefixed_ids_.push_back(-1);
  return id;
}

std::optional<int> Vocab::find_core(std::string_view core) const {
  if (auto it = core_ids_.find(std::string(core)); it != core_ids_.end()) return it->second;
  return std::nullopt;
}

TokenId Vocab::add_piece(int core, bool prefixed) {
  auto& slot = prefixed ? prefixed_ids_[static_cast<std::size_t>(core)]
                        : plain_ids_[static_cast<std::size_t>(core)];
  if (slot >= 0) return slot;
  const std::string surface = (prefixed ? " " : "") + cores_[static_cast<std::size_t>(core)];
  slot = static_cast<TokenId>(pieces_.size());
  pieces_.push_back(surface);
  piece_ids_.emplace(surface, slot);
  return slot;
}

TokenId Vocab::variant(int core, bool prefixed) const {
  return prefixed ? prefixed_ids_[static_cast<std::size_t>(core)]
                  : plain_ids_[static_cast<std::size_t>(core)];
}

std::string_view Vocab::piece(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(pieces_.size()));
  }
  return pieces_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocab::find(std::string_view piece) const {
  if (auto it = piece_ids_.find(std::string(piece)); it != piece_ids_.end()) return it->second;
  return std::nullopt;
}

void Vocab::encode_word(std::string_view word, bool prefixed, TokenSeq& out) const {
  std::vector<int> symbols;
  symbols.reserve(word.size());
  for (char c : word) {
    auto core = find_core(std::string_view(&c, 1));
    if (!core || variant(*core, false) < 0) {
      throw DataError("encode: " + describe_char(c) + " is not in the tokenizer alphabet");
    }
    symbols.push_back(*core);
  }
  auto result_of = [&](std::size_t i) -> int {
    auto it = merge_rank_.find(pair_key(symbols[i], symbols[i + 1]));
    if (it == merge_rank_.end()) return -1;
    const int result = merge_rules_[static_cast<std::size_t>(it->second)].result;
    return variant(result, prefixed && i == 0) >= 0 ? it->second : -1;
  };
  while (symbols.size() > 1) {
    int best = INT_MAX;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const int rank = result_of(i);
      if (rank >= 0 && rank < best) best = rank;
    }
    if (best == INT_MAX) break;
    const Merge& rule = merge_rules_[static_cast<std::size_t>(best)];
    std::vector<int> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i] == rule.left && symbols[i + 1] == rule.right &&
          result_of(i) == best) {
        next.push_back(rule.result);
        ++i;
      } else {
        next.push_back(symbols[i]);
      }
    }
    symbols = std::move(next);
  }
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    out.push_back(variant(symbols[i], prefixed && i == 0));
  }
}

Encoding Vocab::encode(std::string_view text) const {
  Encoding enc;
  for (const Segment& seg : split_segments(text, specials_, pieces_)) {
    const std::size_t before = enc.token_ids.size();
    switch (seg.kind) {
      case Segment::Kind::special:
        enc.token_ids.push_back(seg.special);
        break;
      case Segment::Kind::space: {
        auto core = find_core(seg.text);
        if (!core || variant(*core, false) < 0) {
          throw DataError("encode: " + describe_char(seg.text[0]) +
                          " is not in the tokenizer alphabet");
        }
        enc.token_ids.push_back(variant(*core, false));
        break;
      }
      case Segment::Kind::word:
        encode_word(seg.text, seg.prefixed, enc.token_ids);
        break;
    }
    for (std::size_t i = before; i < enc.token_ids.size(); ++i) {
      enc.word_starts.push_back(i == before && seg.word_start);
    }
  }
  return enc;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += piece(id);
  return out;
}

void Vocab::rebuild_indexes() {
  piece_ids_.clear();
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    if (!piece_ids_.emplace(pieces_[i], static_cast<TokenId>(i)).second) {
      throw DataError("vocabulary contains duplicate piece '" + pieces_[i] + "'");
    }
  }
}

std::string Vocab::to_json() const {
  json j;
  j["pieces"] = pieces_;
  json merges = json::array();
  for (const auto& [l, r] : merge_text_) merges.push_back(json::array({l, r}));
  j["merges"] = std::move(merges);
  j["specials"] = {{"pad", specials_.pad}, {"bos", specials_.bos}, {"eos", specials_.eos},
                   {"sep", specials_.sep}};
  return j.dump();
}

Vocab Vocab::from_json(std::string_view text) {
  Vocab v;
  try {
    const json j = json::parse(text);
    v.pieces_ = j.at("pieces").get<std::vector<std::string>>();
    const auto& sp = j.at("specials");
    v.specials_ = SpecialTokens{sp.at("pad").get<TokenId>(), sp.at("bos").get<TokenId>(),
                                sp.at("eos").get<TokenId>(), sp.at("sep").get<TokenId>()};
    for (const auto& m : j.at("merges")) {
      v.merge_text_.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("vocabulary JSON: ") + e.what());
  }
  const std::set<TokenId> special_ids{v.specials_.pad, v.specials_.bos, v.specials_.eos,
                                      v.specials_.sep};
  if (special_ids.size() != 4 || *special_ids.rbegin() >= static_cast<TokenId>(v.pieces_.size()) ||
      *special_ids.begin() < 0) {
    throw DataError("vocabulary JSON: special ids must be distinct and inside the vocabulary");
  }
  v.rebuild_indexes();
  v.base_size_ = special_ids.size();
  for (std::size_t i = 0; i < v.pieces_.size(); ++i) {
    if (special_ids.count(static_cast<TokenId>(i))) continue;
    const std::string& s = v.pieces_[i];
    if (s.empty()) throw DataError("vocabulary JSON: empty piece at id " + std::to_string(i));
    const bool prefixed = s.size() > 1 && s[0] == ' ';
    const int core = v.core_id(prefixed ? s.substr(1) : s);
    (prefixed ? v.prefixed_ids_ : v.plain_ids_)[static_cast<std::size_t>(core)] =
        static_cast<TokenId>(i);
    if (v.cores_[static_cast<std::size_t>(core)].size() == 1) ++v.base_size_;
  }
  for (const auto& [l, r] : v.merge_text_) {
    auto left = v.find_core(l), right = v.find_core(r), result = v.find_core(l + r);
    if (!left || !right || !result) {
      throw DataError("vocabulary JSON: merge ('" + l + "','" + r + "') refers to missing pieces");
    }
    const int rank = static_cast<int>(v.merge_rules_.size());
    v.merge_rules_.push_back({*left, *right, *result});
    v.merge_rank_.emplace(pair_key(*left, *right), rank);
  }
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write vocabulary to " + path.string());
  os << json::parse(to_json()).dump(1) << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read vocabulary " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return from_json(ss.str());
}

std::string Vocab::hash() const { return hex64(fnv1a64(to_json())); }

Vocab train_bpe(std::span<const std::string> corpus, std::size_t target_vocab_size) {
  Vocab v;
  v.pieces_ = {std::string(kPadText), std::string(kBosText), std::string(kEosText),
               std::string(kSepText)};
  v.rebuild_indexes();
  v.base_size_ = v.pieces_.size();

  std::map<std::pair<std::string, bool>, std::int64_t> word_counts;
  std::set<unsigned char> alphabet{static_cast<unsigned char>(' ')};
  bool any_text = false;
  for (const std::string& doc : corpus) {
    for (const Segment& seg : split_segments(doc, v.specials_, v.pieces_)) {
      if (seg.kind == Segment::Kind::special) continue;
      any_text = true;
      for (char c : seg.text) alphabet.insert(static_cast<unsigned char>(c));
      if (seg.kind == Segment::Kind::word) ++word_counts[{std::string(seg.text), seg.prefixed}];
    }
  }
  if (!any_text) throw TrainingError("train_bpe: empty corpus");

  for (unsigned char c : alphabet) {
    const int core = v.core_id(std::string(1, static_cast<char>(c)));
    v.add_piece(core, false);
    if (!is_space(static_cast<char>(c))) v.add_piece(core, true);
  }
  v.base_size_ = v.pieces_.size();
  if (target_vocab_size <= v.base_size_) {
    throw TrainingError("train_bpe: target vocabulary size " + std::to_string(target_vocab_size) +
                        " must exceed the " + std::to_string(v.base_size_) +
                        " specials and base symbols");
  }

  std::vector<TrainWord> words;
  for (const auto& [key, count] : word_counts) {
    TrainWord w;
    for (char c : key.first) w.symbols.push_back(*v.find_core(std::string_view(&c, 1)));
    w.prefixed = key.second;
    w.count = count;
    words.push_back(std::move(w));
  }

  struct PairStats {
    std::int64_t plain = 0;
    std::int64_t prefixed = 0;
  };
  while (v.pieces_.size() < target_vocab_size) {
    std::unordered_map<std::uint64_t, PairStats> stats;
    for (const TrainWord& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        auto& s = stats[pair_key(w.symbols[i], w.symbols[i + 1])];
        (i == 0 && w.prefixed ? s.prefixed : s.plain) += w.count;
      }
    }
    if (stats.empty()) {
      throw TrainingError("train_bpe: corpus exhausted after " +
                          std::to_string(v.merge_rules_.size()) + " merges; cannot reach " +
                          std::to_string(target_vocab_size) + " pieces");
    }
    std::uint64_t best_key = 0;
    std::int64_t best_count = -1;
    for (const auto& [key, s] : stats) {
      const std::int64_t total = s.plain + s.prefixed;
      const int l = static_cast<int>(key >> 32), r = static_cast<int>(key & 0xffffffffu);
      bool better = total > best_count;
      if (!better && total == best_count) {
        const int bl = static_cast<int>(best_key >> 32), br = static_cast<int>(best_key & 0xffffffffu);
        better = std::tie(v.cores_[static_cast<std::size_t>(l)], v.cores_[static_cast<std::size_t>(r)]) <
                 std::tie(v.cores_[static_cast<std::size_t>(bl)], v.cores_[static_cast<std::size_t>(br)]);
      }
      if (better) {
        best_key = key;
        best_count = total;
      }
    }
    const int left = static_cast<int>(best_key >> 32);
    const int right = static_cast<int>(best_key & 0xffffffffu);
    const PairStats s = stats[best_key];
    const std::string merged = v.cores_[static_cast<std::size_t>(left)] +
                               v.cores_[static_cast<std::size_t>(right)];
    const int result = v.core_id(merged);

    // Add the observed variants; with one slot left keep the more frequent.
    std::vector<bool> wanted;
    if (s.plain > 0 && v.variant(result, false) < 0) wanted.push_back(false);
    if (s.prefixed > 0 && v.variant(result, true) < 0) wanted.push_back(true);
    if (wanted.size() == 2 && v.pieces_.size() + 1 == target_vocab_size) {
      wanted = {s.prefixed > s.plain};
    }
    for (bool prefixed : wanted) v.add_piece(result, prefixed);

    const int rank = static_cast<int>(v.merge_rules_.size());
    v.merge_rules_.push_back({left, right, result});
    v.merge_rank_.emplace(best_key, rank);
    v.merge_text_.emplace_back(v.cores_[static_cast<std::size_t>(left)],
                               v.cores_[static_cast<std::size_t>(right)]);

    for (TrainWord& w : words) {
      if (w.symbols.size() < 2) continue;
      std::vector<int> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == left && w.symbols[i + 1] == right &&
            v.variant(result, w.prefixed && i == 0) >= 0) {
          next.push_back(result);
          ++i;
        } else {
          next.push_back(w.symbols[i]);
        }
      }
      w.symbols = std::move(next);
    }
  }
  return v;
}

}  // namespace storylab
