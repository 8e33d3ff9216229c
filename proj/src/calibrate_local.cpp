#include "recal/calibrate_local.hpp"

#include <algorithm>

#include "recal/error.hpp"
#include "recal/parallel.hpp"

namespace recal {

namespace {

void check_embeddings(std::span<const double> scores, std::span<const Vector> embeddings) {
  if (embeddings.size() != scores.size()) {
    throw MissingEmbeddings("every sample needs an embedding for local calibration");
  }
  for (const auto& e : embeddings) {
    if (e.empty()) throw MissingEmbeddings("empty embedding");
  }
}

// Fits the per-cluster calibrators on top of an already clustered ensemble.
void fit_cluster_calibrators(LocalEnsemble& ens, std::span<const double> scores,
                             const std::vector<bool>& labels) {
  const auto k = ens.clusters.cluster_count;
  std::vector<std::vector<double>> member_scores(k);
  std::vector<std::vector<bool>> member_labels(k);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int c = ens.clusters.labels[i];
    if (c < 0) continue;
    member_scores[static_cast<std::size_t>(c)].push_back(scores[i]);
    member_labels[static_cast<std::size_t>(c)].push_back(labels[i]);
  }
  for (std::size_t c = 0; c < k; ++c) {
    const auto& y = member_labels[c];
    const auto positives = static_cast<std::size_t>(std::count(y.begin(), y.end(), true));
    const std::size_t negatives = y.size() - positives;
    if (positives < kMinClassSupport || negatives < kMinClassSupport) {
      ens.backoff_clusters.push_back(static_cast<int>(c));
      continue;
    }
    ens.per_cluster.emplace(static_cast<int>(c), fit_global(member_scores[c], y, ens.hyper.l2));
  }
}

}  // namespace

std::string_view to_string(BackoffPolicy policy) {
  return policy == BackoffPolicy::Global ? "global" : "uncalibrated";
}

BackoffPolicy parse_backoff(std::string_view name) {
  if (name == "global") return BackoffPolicy::Global;
  if (name == "uncalibrated") return BackoffPolicy::Uncalibrated;
  throw Error("unknown backoff policy '" + std::string(name) + "'");
}

LocalEnsemble fit_local(std::span<const double> scores, const std::vector<bool>& labels,
                        std::span<const Vector> embeddings, const LocalHyper& hyper, ScoreKind kind,
                        unsigned workers) {
  if (scores.size() != labels.size()) throw LengthMismatch("scores and labels differ in length");
  check_embeddings(scores, embeddings);

  LocalEnsemble ens;
  ens.score_kind = kind;
  ens.hyper = hyper;
  ens.fallback = fit_global(scores, labels, hyper.l2);
  ens.space = fit_feature_space(fit_projection(embeddings, hyper.n), embeddings, scores);
  const auto features = build_features(ens.space, embeddings, scores);
  ens.clusters = hdbscan(features, hyper.min_cluster_size, hyper.min_samples, workers);
  fit_cluster_calibrators(ens, scores, labels);
  return ens;
}

int route(const LocalEnsemble& ens, double score, std::span<const double> embedding) {
  return assign(ens.clusters, ens.space.feature(embedding, score));
}

double predict_local(const LocalEnsemble& ens, double score, std::span<const double> embedding) {
  const int cluster = route(ens, score, embedding);
  if (auto it = ens.per_cluster.find(cluster); it != ens.per_cluster.end()) {
    return predict_global(it->second, score);
  }
  return ens.hyper.backoff == BackoffPolicy::Global ? predict_global(ens.fallback, score) : score;
}

nlohmann::json to_json(const LocalHyper& hyper) {
  return {{"min_cluster_size", hyper.min_cluster_size},
          {"min_samples", hyper.min_samples},
          {"backoff", to_string(hyper.backoff)},
          {"n", hyper.n},
          {"l2", hyper.l2}};
}

nlohmann::json to_json(const LocalEnsemble& ens) {
  nlohmann::json j = to_json(ens.space);
  j["kind"] = "local";
  j["score_kind"] = to_string(ens.score_kind);
  j["training_features"] = ens.clusters.training_features;
  j["labels"] = ens.clusters.labels;
  nlohmann::json per_cluster = nlohmann::json::object();
  for (const auto& [id, cal] : ens.per_cluster) per_cluster[std::to_string(id)] = to_json(cal);
  j["per_cluster"] = std::move(per_cluster);
  j["backoff_clusters"] = ens.backoff_clusters;
  j["backoff"] = to_string(ens.hyper.backoff);
  j["fallback"] = to_json(ens.fallback);
  j["hyper"] = to_json(ens.hyper);
  return j;
}

LocalEnsemble local_ensemble_from_json(const nlohmann::json& j) {
  try {
    if (j.value("kind", std::string()) != "local") throw SchemaError("model kind is not 'local'");
    LocalEnsemble ens;
    ens.score_kind = parse_score_kind(j.at("score_kind").get<std::string>());
    ens.space = feature_space_from_json(j);
    const auto& h = j.at("hyper");
    ens.hyper.min_cluster_size = h.at("min_cluster_size").get<std::size_t>();
    ens.hyper.min_samples = h.at("min_samples").get<std::size_t>();
    ens.hyper.n = h.at("n").get<std::size_t>();
    ens.hyper.l2 = h.at("l2").get<double>();
    ens.hyper.backoff = parse_backoff(j.at("backoff").get<std::string>());
    ens.clusters.min_cluster_size = ens.hyper.min_cluster_size;
    ens.clusters.min_samples = ens.hyper.min_samples;
    ens.clusters.training_features = j.at("training_features").get<std::vector<FeatureVector>>();
    ens.clusters.labels = j.at("labels").get<std::vector<int>>();
    if (ens.clusters.labels.size() != ens.clusters.training_features.size()) {
      throw SchemaError("cluster labels and training features differ in length");
    }
    for (const auto& f : ens.clusters.training_features) {
      if (f.size() != ens.space.dim()) throw SchemaError("training feature has the wrong dimension");
    }
    int max_label = -1;
    for (int l : ens.clusters.labels) max_label = std::max(max_label, l);
    ens.clusters.cluster_count = static_cast<std::size_t>(max_label + 1);
    for (const auto& [id, cal] : j.at("per_cluster").items()) {
      ens.per_cluster.emplace(std::stoi(id), global_calibrator_from_json(cal));
    }
    ens.backoff_clusters = j.at("backoff_clusters").get<std::vector<int>>();
    ens.fallback = global_calibrator_from_json(j.at("fallback"));
    return ens;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed local model: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw SchemaError("malformed cluster id in local model");
  }
}

std::vector<LocalHyper> GridSpec::combinations() const {
  std::vector<LocalHyper> out;
  for (std::size_t mcs : min_cluster_sizes) {
    for (std::size_t ms : min_samples) {
      for (BackoffPolicy b : backoffs) out.push_back({mcs, ms, b, n, l2});
    }
  }
  return out;
}

bool ranks_before(const EvaluationReport& a, const EvaluationReport& b) {
  if (a.ece != b.ece) return a.ece < b.ece;
  if (a.brier != b.brier) return a.brier < b.brier;
  return a.bin_coverage > b.bin_coverage;
}

GridResult grid_search(const Dataset& train, const Dataset& valid, const GridSpec& grid, ScoreKind kind,
                       unsigned workers) {
  const auto combos = grid.combinations();
  if (combos.empty()) throw EmptyGrid("hyperparameter grid is empty");
  if (valid.scores.empty()) throw EmptyInput("validation set is empty");
  check_embeddings(valid.scores, valid.embeddings);
  if (valid.labels.size() != valid.scores.size()) throw LengthMismatch("validation labels misaligned");
  check_embeddings(train.scores, train.embeddings);

  // The clustering only depends on (min_cluster_size, min_samples); backoff
  // variants reuse it.
  const GlobalCalibrator fallback = fit_global(train.scores, train.labels, grid.l2);
  const FeatureSpace space =
      fit_feature_space(fit_projection(train.embeddings, grid.n), train.embeddings, train.scores);
  const auto features = build_features(space, train.embeddings, train.scores);

  std::vector<GridRow> table(combos.size());
  const std::size_t per_pair = grid.backoffs.size();
  const std::size_t pairs = combos.size() / per_pair;
  parallel_for(pairs, workers, [&](std::size_t p) {
    const LocalHyper& first = combos[p * per_pair];
    LocalEnsemble base;
    base.score_kind = kind;
    base.hyper = first;
    base.fallback = fallback;
    base.space = space;
    std::string skip;
    try {
      base.clusters = hdbscan(features, first.min_cluster_size, first.min_samples, 1);
      fit_cluster_calibrators(base, train.scores, train.labels);
    } catch (const TooFewPoints& e) {
      skip = e.what();
    }
    for (std::size_t b = 0; b < per_pair; ++b) {
      const std::size_t idx = p * per_pair + b;
      table[idx].hyper = combos[idx];
      if (!skip.empty()) {
        table[idx].skip_reason = skip;
        continue;
      }
      LocalEnsemble ens = base;
      ens.hyper = combos[idx];
      std::vector<double> predictions(valid.scores.size());
      for (std::size_t i = 0; i < valid.scores.size(); ++i) {
        predictions[i] = predict_local(ens, valid.scores[i], valid.embeddings[i]);
      }
      table[idx].report = reliability_table(predictions, valid.labels, grid.bins);
    }
  });

  GridResult result;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!table[i].report) continue;
    if (!best || ranks_before(*table[i].report, *table[*best].report)) best = i;
  }
  if (!best) throw TooFewPoints("every grid combination was skipped: training set too small");
  result.best_index = *best;
  result.best_hyper = table[*best].hyper;
  result.best_report = *table[*best].report;
  result.table = std::move(table);
  return result;
}

nlohmann::json to_json(const GridResult& result) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : result.table) {
    nlohmann::json r = {{"hyper", to_json(row.hyper)}};
    if (row.report) {
      r["ece"] = row.report->ece;
      r["brier"] = row.report->brier;
      r["bin_coverage"] = row.report->bin_coverage;
      r["degenerate"] = row.report->degenerate;
    } else {
      r["skipped"] = row.skip_reason;
    }
    rows.push_back(std::move(r));
  }
  return {{"best_index", result.best_index},
          {"best_hyper", to_json(result.best_hyper)},
          {"best_report", to_json(result.best_report)},
          {"table", std::move(rows)}};
}

}  // namespace recal
