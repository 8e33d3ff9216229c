#include "recal/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "recal/error.hpp"
#include "recal/kneedle.hpp"

namespace recal {

namespace {

void require_tokens(std::span<const double> token_probs) {
  if (token_probs.empty()) throw EmptyInput("token probability sequence is empty");
}

double mean_at(std::span<const double> values, std::span<const std::size_t> positions) {
  double sum = 0.0;
  for (std::size_t pos : positions) sum += values[pos];
  return sum / static_cast<double>(positions.size());
}

}  // namespace

std::string_view to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::SlNorm: return "sl_norm";
    case ScoreKind::Avg: return "avg";
    case ScoreKind::Min: return "min";
    case ScoreKind::LowK: return "low_k";
    case ScoreKind::AttnW: return "attn_w";
  }
  return "unknown";
}

ScoreKind parse_score_kind(std::string_view name) {
  for (ScoreKind kind : kAllScoreKinds) {
    if (to_string(kind) == name) return kind;
  }
  throw Error("unknown score kind '" + std::string(name) + "'");
}

double score_sl_norm(std::span<const double> token_probs) {
  require_tokens(token_probs);
  double log_sum = 0.0;
  for (double p : token_probs) {
    if (p <= 0.0) return 0.0;
    log_sum += std::log(p);
  }
  return std::min(1.0, std::exp(log_sum / static_cast<double>(token_probs.size())));
}

double score_avg(std::span<const double> token_probs) {
  require_tokens(token_probs);
  return std::accumulate(token_probs.begin(), token_probs.end(), 0.0) /
         static_cast<double>(token_probs.size());
}

double score_min(std::span<const double> token_probs) {
  require_tokens(token_probs);
  return *std::min_element(token_probs.begin(), token_probs.end());
}

std::vector<std::size_t> low_k_selection(std::span<const double> token_probs,
                                         std::optional<std::size_t> forced_k) {
  require_tokens(token_probs);
  std::vector<std::size_t> order(token_probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return token_probs[a] < token_probs[b]; });

  std::size_t k = 1;
  if (forced_k) {
    k = std::clamp<std::size_t>(*forced_k, 1, order.size());
  } else {
    std::vector<double> sorted(order.size());
    std::transform(order.begin(), order.end(), sorted.begin(),
                   [&](std::size_t i) { return token_probs[i]; });
    k = kneedle_concave_increasing(sorted).k;
  }
  order.resize(k);
  return order;
}

double score_low_k(std::span<const double> token_probs, std::optional<std::size_t> forced_k) {
  const auto selected = low_k_selection(token_probs, forced_k);
  return mean_at(token_probs, selected);
}

SquareMatrix rollout(std::span<const SquareMatrix> attention) {
  if (attention.empty()) return {};
  const std::size_t t = attention.front().size;
  SquareMatrix result = SquareMatrix::identity(t);
  SquareMatrix mixed(t);
  SquareMatrix product(t);
  for (const auto& layer : attention) {
    if (layer.size != t || layer.values.size() != t * t) {
      throw DimensionMismatch("attention layers must all be " + std::to_string(t) + " x " +
                              std::to_string(t));
    }
    for (std::size_t r = 0; r < t; ++r) {
      double row_sum = 0.0;
      for (std::size_t c = 0; c < t; ++c) {
        mixed(r, c) = 0.5 * layer(r, c) + (r == c ? 0.5 : 0.0);
        row_sum += mixed(r, c);
      }
      for (std::size_t c = 0; c < t; ++c) mixed(r, c) /= row_sum;
    }
    // product = mixed * result
    std::fill(product.values.begin(), product.values.end(), 0.0);
    for (std::size_t r = 0; r < t; ++r) {
      for (std::size_t k = 0; k < t; ++k) {
        const double a = mixed(r, k);
        if (a == 0.0) continue;
        for (std::size_t c = 0; c < t; ++c) product(r, c) += a * result(k, c);
      }
    }
    std::swap(result, product);
  }
  return result;
}

std::vector<double> attention_weights(const SquareMatrix& rollout_matrix) {
  const std::size_t t = rollout_matrix.size;
  std::vector<double> weights(t, 1.0);
  for (std::size_t col = 0; col < t; ++col) {
    for (std::size_t row = col; row < t; ++row) weights[col] += rollout_matrix(row, col);
  }
  return weights;
}

std::vector<std::size_t> attn_w_selection(std::span<const double> token_probs,
                                          std::span<const double> weights) {
  require_tokens(token_probs);
  if (weights.size() != token_probs.size()) {
    throw LengthMismatch("attention weights and token probabilities differ in length");
  }
  std::vector<double> uncertainty(token_probs.size());
  for (std::size_t t = 0; t < token_probs.size(); ++t) {
    uncertainty[t] = weights[t] * (1.0 - token_probs[t]);
  }
  std::vector<std::size_t> order(token_probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return uncertainty[a] > uncertainty[b]; });
  std::vector<double> sorted(order.size());
  std::transform(order.begin(), order.end(), sorted.begin(),
                 [&](std::size_t i) { return uncertainty[i]; });
  order.resize(kneedle_convex_decreasing(sorted).k);
  return order;
}

double score_attn_w(std::span<const double> token_probs, std::span<const double> weights) {
  if (weights.empty()) throw MissingAttention("attention weights unavailable");
  const auto selected = attn_w_selection(token_probs, weights);
  return mean_at(token_probs, selected);
}

double score_trace(const GenerationTrace& trace, ScoreKind kind) {
  switch (kind) {
    case ScoreKind::SlNorm: return score_sl_norm(trace.token_probs);
    case ScoreKind::Avg: return score_avg(trace.token_probs);
    case ScoreKind::Min: return score_min(trace.token_probs);
    case ScoreKind::LowK: return score_low_k(trace.token_probs);
    case ScoreKind::AttnW: {
      if (!trace.attention) throw MissingAttention("trace '" + trace.id + "' has no attention");
      const std::size_t t = trace.token_probs.size();
      const SquareMatrix rolled =
          trace.attention->empty() ? SquareMatrix::identity(t) : rollout(*trace.attention);
      const auto weights = attention_weights(rolled);
      return score_attn_w(trace.token_probs, weights);
    }
  }
  throw Error("unhandled score kind");
}

}  // namespace recal
