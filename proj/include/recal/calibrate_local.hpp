#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "recal/calibrate_global.hpp"
#include "recal/cluster.hpp"
#include "recal/confidence.hpp"
#include "recal/metrics.hpp"

namespace recal {

// What an outlier (or an under-supported cluster) falls back to.
enum class BackoffPolicy { Global, Uncalibrated };

std::string_view to_string(BackoffPolicy policy);
BackoffPolicy parse_backoff(std::string_view name);  // "global" | "uncalibrated"

// A cluster needs this many members of each class before it gets its own calibrator.
inline constexpr std::size_t kMinClassSupport = 10;

struct LocalHyper {
  std::size_t min_cluster_size = 50;
  std::size_t min_samples = 5;
  BackoffPolicy backoff = BackoffPolicy::Global;
  std::size_t n = kDefaultProjectionDim;
  double l2 = kDefaultL2;

  bool operator==(const LocalHyper&) const = default;
};

struct LocalEnsemble {
  ScoreKind score_kind = ScoreKind::SlNorm;
  LocalHyper hyper;
  FeatureSpace space;
  ClusterModel clusters;
  std::map<int, GlobalCalibrator> per_cluster;
  std::vector<int> backoff_clusters;
  GlobalCalibrator fallback;
};

LocalEnsemble fit_local(std::span<const double> scores, const std::vector<bool>& labels,
                        std::span<const Vector> embeddings, const LocalHyper& hyper,
                        ScoreKind kind = ScoreKind::SlNorm, unsigned workers = 1);

// Cluster id the query is routed to (-1 for outliers).
int route(const LocalEnsemble& ens, double score, std::span<const double> embedding);
double predict_local(const LocalEnsemble& ens, double score, std::span<const double> embedding);

nlohmann::json to_json(const LocalEnsemble& ens);
LocalEnsemble local_ensemble_from_json(const nlohmann::json& j);

struct Dataset {
  std::vector<double> scores;
  std::vector<bool> labels;
  std::vector<Vector> embeddings;
};

struct GridSpec {
  std::vector<std::size_t> min_cluster_sizes{50, 75, 100, 125, 150};
  std::vector<std::size_t> min_samples{5, 20, 35, 50, 65, 80};
  std::vector<BackoffPolicy> backoffs{BackoffPolicy::Global, BackoffPolicy::Uncalibrated};
  std::size_t n = kDefaultProjectionDim;
  double l2 = kDefaultL2;
  std::size_t bins = kDefaultBins;

  // Combinations in iteration order: cluster size outermost, backoff innermost.
  std::vector<LocalHyper> combinations() const;
};

struct GridRow {
  LocalHyper hyper;
  std::optional<EvaluationReport> report;  // empty when skipped
  std::string skip_reason;
};

struct GridResult {
  std::size_t best_index = 0;
  LocalHyper best_hyper;
  EvaluationReport best_report;
  std::vector<GridRow> table;
};

// True when report a ranks strictly ahead of b: lower ECE, then lower Brier,
// then higher bin coverage.
bool ranks_before(const EvaluationReport& a, const EvaluationReport& b);

// Fits every combination on `train`, evaluates on `valid` and returns the
// lexicographic winner (earliest combination on exact ties). Combinations
// that cannot be clustered are recorded as skipped.
GridResult grid_search(const Dataset& train, const Dataset& valid, const GridSpec& grid,
                       ScoreKind kind = ScoreKind::SlNorm, unsigned workers = 1);

nlohmann::json to_json(const LocalHyper& hyper);
nlohmann::json to_json(const GridResult& result);

}  // namespace recal
