#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace storylab {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

/// A ranking example after tokenization: N candidate sequences sharing a
/// context prefix, one of which is the sensible one.
struct PackedRanking {
  std::vector<TokenSeq> sequences;
  // Token count of the shared prefix (bos + context) in every sequence.
  std::size_t context_length = 1;
  std::size_t correct_index = 0;
};

/// An LM sequence plus a word-start flag for every predicted position
/// (word_starts[t] describes ids[t + 1]).
struct ScoredSequence {
  TokenSeq ids;
  std::vector<bool> word_starts;
};

}  // namespace storylab
