#pragma once

#include <span>
#include <vector>

#include "storylab/graph.hpp"
#include "storylab/model.hpp"
#include "storylab/types.hpp"

namespace storylab {

/// Which tokens of a packed ranking sequence enter its length-normalized
/// score. With the context included every token after bos is scored;
/// otherwise only the continuation is.
struct ScoreSpan {
  bool include_context = true;
};

/// Index of the first scored token of a packed ranking sequence.
std::size_t first_scored_token(const PackedRanking& item, ScoreSpan span);

/// Mean next-token NLL (nats) over positions 1..T-1.
Tensor lm_loss(Graph& g, const Model& model, std::span<const TokenId> ids,
               const ForwardOptions& opts = {});

/// Arithmetic mean of per-token log-probabilities.
double rank_score(std::span<const double> token_log_probs);

/// Mean log P(ids[t] | ids[0..t-1]) for t in [first_scored, T).
double rank_score(const Model& model, std::span<const TokenId> ids, std::size_t first_scored = 1);
Tensor rank_score(Graph& g, const Model& model, std::span<const TokenId> ids,
                  std::size_t first_scored = 1, const ForwardOptions& opts = {});

/// -log softmax(scores)[correct], evaluated with log-sum-exp.
double ranking_loss(std::span<const double> scores, std::size_t correct);
Tensor ranking_loss(Graph& g, const Tensor& scores, std::size_t correct);

/// Ranking loss from raw per-token log-probabilities of each choice's scored
/// span.
double ranking_loss_from_log_probs(const std::vector<std::vector<double>>& token_log_probs,
                                   std::size_t correct);

/// Full differentiable ranking loss of one packed item.
Tensor ranking_loss(Graph& g, const Model& model, const PackedRanking& item,
                    ScoreSpan span = {}, const ForwardOptions& opts = {});

}  // namespace storylab
