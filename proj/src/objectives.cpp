#include "storylab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "storylab/error.hpp"

namespace storylab {
namespace {

void check_choices(std::size_t n, std::size_t correct) {
  if (n < 2) throw ContractError("ranking_loss: need at least 2 choices, got " + std::to_string(n));
  if (correct >= n) {
    throw ContractError("ranking_loss: correct_index " + std::to_string(correct) +
                        " out of range for " + std::to_string(n) + " choices");
  }
}

void check_span(std::size_t size, std::size_t first_scored) {
  if (first_scored == 0) throw ContractError("rank_score: token 0 has no prefix to condition on");
  if (first_scored >= size) throw ContractError("rank_score: empty scored span");
}

}  // namespace

std::size_t first_scored_token(const PackedRanking& item, ScoreSpan span) {
  return span.include_context ? 1 : item.context_length;
}

Tensor lm_loss(Graph& g, const Model& model, std::span<const TokenId> ids,
               const ForwardOptions& opts) {
  if (ids.size() < 2) throw ContractError("lm_loss: no predictable positions");
  Tensor logits = model.forward(g, ids.first(ids.size() - 1), opts);
  return g.cross_entropy(logits, ids.subspan(1));
}

double rank_score(std::span<const double> token_log_probs) {
  if (token_log_probs.empty()) throw ContractError("rank_score: empty scored span");
  return std::accumulate(token_log_probs.begin(), token_log_probs.end(), 0.0) /
         static_cast<double>(token_log_probs.size());
}

double rank_score(const Model& model, std::span<const TokenId> ids, std::size_t first_scored) {
  check_span(ids.size(), first_scored);
  const std::vector<double> lp = sequence_log_probs(model, ids);
  return rank_score(std::span<const double>(lp).subspan(first_scored - 1));
}

Tensor rank_score(Graph& g, const Model& model, std::span<const TokenId> ids,
                  std::size_t first_scored, const ForwardOptions& opts) {
  check_span(ids.size(), first_scored);
  Tensor logits = model.forward(g, ids.first(ids.size() - 1), opts);
  Tensor lp = g.token_log_probs(logits, ids.subspan(1));
  if (first_scored == 1) return g.mean(lp);
  std::vector<std::size_t> offsets(ids.size() - first_scored);
  std::iota(offsets.begin(), offsets.end(), first_scored - 1);
  return g.mean(g.select(lp, offsets));
}

double ranking_loss(std::span<const double> scores, std::size_t correct) {
  check_choices(scores.size(), correct);
  const double top = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (double s : scores) total += std::exp(s - top);
  return top + std::log(total) - scores[correct];
}

Tensor ranking_loss(Graph& g, const Tensor& scores, std::size_t correct) {
  check_choices(scores.size(), correct);
  Tensor lsm = g.log_softmax(scores);
  const std::size_t offset[1] = {correct};
  return g.scale(g.sum(g.select(lsm, offset)), -1.0);
}

double ranking_loss_from_log_probs(const std::vector<std::vector<double>>& token_log_probs,
                                   std::size_t correct) {
  std::vector<double> scores;
  scores.reserve(token_log_probs.size());
  for (const auto& lp : token_log_probs) scores.push_back(rank_score(lp));
  return ranking_loss(scores, correct);
}

Tensor ranking_loss(Graph& g, const Model& model, const PackedRanking& item, ScoreSpan span,
                    const ForwardOptions& opts) {
  check_choices(item.sequences.size(), item.correct_index);
  const std::size_t first = first_scored_token(item, span);
  std::vector<Tensor> scores;
  scores.reserve(item.sequences.size());
  for (const TokenSeq& seq : item.sequences) scores.push_back(rank_score(g, model, seq, first, opts));
  return ranking_loss(g, g.stack(scores), item.correct_index);
}

}  // namespace storylab
