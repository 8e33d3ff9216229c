#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "recal/trace_io.hpp"

namespace recal {

struct SeparationReport {
  double w1 = 0.0;
  double tau_b = 0.0;
  std::size_t n_correct = 0;
  std::size_t n_incorrect = 0;
};

// Population skewness; 0 for constant sequences.
double sample_skewness(std::span<const double> token_probs);

// Lower median of the per-trace skewness values.
double median_skewness(std::span<const GenerationTrace> traces);
double lower_median(std::vector<double> values);

// 1-D Wasserstein-1 distance between two empirical distributions.
double wasserstein1(std::span<const double> xs, std::span<const double> ys);

// Pair counts behind tau-b: n0 total pairs, n1/n2 tied pairs in x/y,
// concordant_minus_discordant = n_c - n_d.
struct KendallCounts {
  std::int64_t n0 = 0;
  std::int64_t n1 = 0;
  std::int64_t n2 = 0;
  std::int64_t concordant_minus_discordant = 0;
};

KendallCounts kendall_counts(std::span<const double> x, std::span<const double> y);
double tau_b_from_counts(const KendallCounts& counts);  // throws DegenerateInput
double kendall_tau_b(std::span<const double> x, std::span<const double> y);
double kendall_tau_b(std::span<const double> scores, const std::vector<bool>& labels);

// W1 between scores of correct and incorrect samples plus tau-b of score vs label.
SeparationReport separation(std::span<const double> scores, const std::vector<bool>& labels);

}  // namespace recal
