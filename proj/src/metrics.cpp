#include "recal/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "recal/error.hpp"

namespace recal {

namespace {

void check(std::span<const double> predictions, const std::vector<bool>& labels, std::size_t bins) {
  if (predictions.size() != labels.size()) throw LengthMismatch("predictions and labels differ in length");
  if (predictions.empty()) throw EmptyInput("no predictions to evaluate");
  if (bins == 0) throw Error("bin count must be positive");
}

double edge(std::size_t k, std::size_t bins) {
  return static_cast<double>(k) / static_cast<double>(bins);
}

}  // namespace

std::size_t bin_index(double prediction, std::size_t bins) {
  if (!(prediction > 0.0)) return 0;
  if (prediction >= 1.0) return bins - 1;
  auto k = static_cast<std::size_t>(std::floor(prediction * static_cast<double>(bins)));
  k = std::min(k, bins - 1);
  // Align with the bin edges as they are represented in floating point.
  while (k + 1 < bins && prediction >= edge(k + 1, bins)) ++k;
  while (k > 0 && prediction < edge(k, bins)) --k;
  return k;
}

EvaluationReport reliability_table(std::span<const double> predictions, const std::vector<bool>& labels,
                                   std::size_t bins) {
  check(predictions, labels, bins);
  EvaluationReport report;
  report.n = predictions.size();
  report.bins.resize(bins);
  std::vector<double> conf_sum(bins, 0.0);
  std::vector<double> hit_sum(bins, 0.0);
  double squared = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const std::size_t b = bin_index(predictions[i], bins);
    const double y = labels[i] ? 1.0 : 0.0;
    ++report.bins[b].count;
    conf_sum[b] += predictions[i];
    hit_sum[b] += y;
    squared += (predictions[i] - y) * (predictions[i] - y);
  }
  const double n = static_cast<double>(predictions.size());
  for (std::size_t b = 0; b < bins; ++b) {
    auto& bin = report.bins[b];
    bin.index = b;
    bin.lower = edge(b, bins);
    bin.upper = edge(b + 1, bins);
    if (bin.count == 0) continue;
    const double count = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / count;
    bin.accuracy = hit_sum[b] / count;
    report.ece += count / n * std::abs(bin.accuracy - bin.mean_confidence);
    ++report.bin_coverage;
  }
  report.brier = squared / n;
  report.degenerate = report.bin_coverage == 1;
  return report;
}

double ece(std::span<const double> predictions, const std::vector<bool>& labels, std::size_t bins) {
  return reliability_table(predictions, labels, bins).ece;
}

double brier(std::span<const double> predictions, const std::vector<bool>& labels) {
  check(predictions, labels, 1);
  double squared = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double y = labels[i] ? 1.0 : 0.0;
    squared += (predictions[i] - y) * (predictions[i] - y);
  }
  return squared / static_cast<double>(predictions.size());
}

std::size_t bin_coverage(std::span<const double> predictions, std::size_t bins) {
  if (predictions.empty()) throw EmptyInput("no predictions to evaluate");
  if (bins == 0) throw Error("bin count must be positive");
  std::vector<bool> seen(bins, false);
  for (double p : predictions) seen[bin_index(p, bins)] = true;
  return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
}

nlohmann::json to_json(const EvaluationReport& report) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : report.bins) {
    bins.push_back({{"index", b.index},
                    {"lower", b.lower},
                    {"upper", b.upper},
                    {"count", b.count},
                    {"mean_confidence", b.mean_confidence},
                    {"accuracy", b.accuracy}});
  }
  return {{"ece", report.ece},
          {"brier", report.brier},
          {"bin_coverage", report.bin_coverage},
          {"degenerate", report.degenerate},
          {"n", report.n},
          {"bins", std::move(bins)}};
}

}  // namespace recal
