#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recal/trace_io.hpp"

namespace recal {

enum class ScoreKind { SlNorm, Avg, Min, LowK, AttnW };

std::string_view to_string(ScoreKind kind);
ScoreKind parse_score_kind(std::string_view name);  // throws Error on unknown names
inline constexpr ScoreKind kAllScoreKinds[] = {ScoreKind::SlNorm, ScoreKind::Avg, ScoreKind::Min,
                                               ScoreKind::LowK, ScoreKind::AttnW};

struct ScoredSample {
  std::string id;
  ScoreKind kind = ScoreKind::SlNorm;
  double score = 0.0;
};

// Length-normalised sequence likelihood (geometric mean), evaluated in log space.
// Any zero probability yields exactly 0.
double score_sl_norm(std::span<const double> token_probs);
double score_avg(std::span<const double> token_probs);
double score_min(std::span<const double> token_probs);

// Positions selected by the lowest-K rule, in selection order (ascending
// probability, ties by position). `forced_k` overrides the knee for testing.
std::vector<std::size_t> low_k_selection(std::span<const double> token_probs,
                                         std::optional<std::size_t> forced_k = std::nullopt);
double score_low_k(std::span<const double> token_probs,
                   std::optional<std::size_t> forced_k = std::nullopt);

// Attention rollout: product of row-normalised (0.5 A_l + 0.5 I), last layer leftmost.
SquareMatrix rollout(std::span<const SquareMatrix> attention);

// w_t = 1 + sum over j >= t of rollout(j, t).
std::vector<double> attention_weights(const SquareMatrix& rollout_matrix);

// Positions with the highest weighted uncertainty w_t (1 - p_t), in selection order.
std::vector<std::size_t> attn_w_selection(std::span<const double> token_probs,
                                          std::span<const double> weights);
double score_attn_w(std::span<const double> token_probs, std::span<const double> weights);

// Dispatches on kind. Throws MissingAttention for AttnW on a trace without attention.
double score_trace(const GenerationTrace& trace, ScoreKind kind);

}  // namespace recal
