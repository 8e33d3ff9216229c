#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

namespace recal {

inline constexpr std::size_t kDefaultBins = 10;

struct ReliabilityBin {
  std::size_t index = 0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

struct EvaluationReport {
  double ece = 0.0;
  double brier = 0.0;
  std::size_t bin_coverage = 0;
  std::vector<ReliabilityBin> bins;
  bool degenerate = false;  // single-bin collapse
  std::size_t n = 0;
};

// Equal-width bin [k/B, (k+1)/B); 1.0 goes to the last bin.
std::size_t bin_index(double prediction, std::size_t bins);

double ece(std::span<const double> predictions, const std::vector<bool>& labels,
           std::size_t bins = kDefaultBins);
double brier(std::span<const double> predictions, const std::vector<bool>& labels);
std::size_t bin_coverage(std::span<const double> predictions, std::size_t bins = kDefaultBins);
EvaluationReport reliability_table(std::span<const double> predictions, const std::vector<bool>& labels,
                                   std::size_t bins = kDefaultBins);

nlohmann::json to_json(const EvaluationReport& report);

}  // namespace recal
