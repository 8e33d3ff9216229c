#include "recal/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "recal/calibrate_global.hpp"
#include "recal/calibrate_local.hpp"
#include "recal/confidence.hpp"
#include "recal/correctness.hpp"
#include "recal/error.hpp"
#include "recal/metrics.hpp"
#include "recal/parallel.hpp"
#include "recal/stats.hpp"
#include "recal/synth.hpp"
#include "recal/trace_io.hpp"

namespace recal {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunConfig {
  std::string traces, scores, labels, model, calibrated, out, csv, model_out;
  std::string valid_traces, valid_scores, valid_labels;
  std::string score_kind = "sl_norm";
  std::string metric = "em";
  std::string backoff = "global";
  std::size_t bins = kDefaultBins;
  double l2 = kDefaultL2;
  std::size_t n = kDefaultProjectionDim;
  std::size_t min_cluster_size = 50;
  std::size_t min_samples = 5;
  std::vector<std::size_t> grid_cluster_sizes{50, 75, 100, 125, 150};
  std::vector<std::size_t> grid_min_samples{5, 20, 35, 50, 65, 80};
  std::vector<std::string> grid_backoffs{"global", "uncalibrated"};
  double valid_frac = 0.2;
  std::size_t synth_count = 500;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string log_level;
};

void configure_logging(const std::string& flag_level) {
  auto logger = spdlog::get("recal");
  if (!logger) logger = spdlog::stderr_color_mt("recal");
  spdlog::set_default_logger(logger);
  std::string level = flag_level;
  if (level.empty()) {
    if (const char* env = std::getenv("RECAL_LOG")) level = env;
  }
  if (level.empty()) level = "warn";
  spdlog::set_level(spdlog::level::from_str(level));
}

void write_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::vector<json> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ParseError(number, path + ": " + e.what());
    }
    if (!out.back().is_object()) throw ParseError(number, path + ": record is not an object");
  }
  return out;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(1, path + ": " + e.what());
  }
}

struct ScoreRecord {
  std::string id;
  std::string kind;
  double score = 0.0;
  std::optional<double> calibrated;
};

std::vector<ScoreRecord> read_scores(const std::string& path) {
  std::vector<ScoreRecord> out;
  std::unordered_map<std::string, bool> seen;
  for (const auto& j : read_jsonl(path)) {
    try {
      ScoreRecord r{j.at("id").get<std::string>(), j.value("kind", std::string()), j.at("score").get<double>(),
                    std::nullopt};
      if (auto it = j.find("calibrated"); it != j.end() && !it->is_null()) r.calibrated = it->get<double>();
      if (!seen.emplace(r.id, true).second) throw DuplicateId(r.id);
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw SchemaError(path + ": malformed score record: " + e.what());
    }
  }
  return out;
}

std::unordered_map<std::string, bool> read_labels(const std::string& path) {
  std::unordered_map<std::string, bool> out;
  for (const auto& j : read_jsonl(path)) {
    try {
      const auto id = j.at("id").get<std::string>();
      if (!out.emplace(id, j.at("correct").get<bool>()).second) throw DuplicateId(id);
    } catch (const json::exception& e) {
      throw SchemaError(path + ": malformed label record: " + e.what());
    }
  }
  return out;
}

std::string uniform_kind(const std::vector<ScoreRecord>& scores) {
  std::string kind = scores.empty() ? std::string() : scores.front().kind;
  for (const auto& s : scores) {
    if (s.kind != kind) throw SchemaError("scores file mixes score kinds '" + kind + "' and '" + s.kind + "'");
  }
  return kind;
}

// Inner join of scores and labels in score-file order.
struct Joined {
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<double> calibrated;
  std::vector<bool> labels;
};

Joined join(const std::vector<ScoreRecord>& scores, const std::unordered_map<std::string, bool>& labels,
            bool use_calibrated = false) {
  Joined j;
  for (const auto& s : scores) {
    auto it = labels.find(s.id);
    if (it == labels.end()) continue;
    j.ids.push_back(s.id);
    j.scores.push_back(s.score);
    j.calibrated.push_back(use_calibrated && s.calibrated ? *s.calibrated : s.score);
    j.labels.push_back(it->second);
  }
  const std::size_t dropped_scores = scores.size() - j.ids.size();
  const std::size_t dropped_labels = labels.size() - j.ids.size();
  if (dropped_scores > 0 || dropped_labels > 0) {
    spdlog::warn("join dropped {} score record(s) and {} label record(s) without a match", dropped_scores,
                 dropped_labels);
  }
  if (j.ids.empty()) throw EmptyInput("no ids in common between scores and labels");
  return j;
}

std::unordered_map<std::string, std::vector<double>> embeddings_by_id(const std::string& path) {
  std::unordered_map<std::string, std::vector<double>> out;
  for (auto& t : load_traces(path)) {
    if (t.embedding) out.emplace(t.id, std::move(*t.embedding));
  }
  return out;
}

std::vector<Vector> lookup_embeddings(const std::vector<std::string>& ids,
                                      const std::unordered_map<std::string, std::vector<double>>& table) {
  std::vector<Vector> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = table.find(id);
    if (it == table.end()) throw MissingEmbeddings("embeddings required: no embedding for id '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

Dataset make_dataset(const Joined& j, const std::vector<Vector>& embeddings, const std::vector<std::size_t>& rows) {
  Dataset d;
  for (std::size_t r : rows) {
    d.scores.push_back(j.scores[r]);
    d.labels.push_back(j.labels[r]);
    d.embeddings.push_back(embeddings[r]);
  }
  return d;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string lines(const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

int cmd_score(const RunConfig& cfg) {
  const ScoreKind kind = parse_score_kind(cfg.score_kind);
  const auto traces = load_traces(cfg.traces);
  std::vector<std::optional<double>> scores(traces.size());
  std::vector<std::string> problems(traces.size());
  parallel_for(traces.size(), cfg.threads, [&](std::size_t i) {
    try {
      scores[i] = score_trace(traces[i], kind);
    } catch (const Error& e) {
      problems[i] = e.what();
    }
  });
  std::vector<json> out;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (!scores[i]) {
      spdlog::warn("{}: skipped: {}", traces[i].id, problems[i]);
      ++skipped;
      continue;
    }
    out.push_back({{"id", traces[i].id}, {"kind", to_string(kind)}, {"score", *scores[i]}});
  }
  write_atomic(cfg.out, lines(out));
  return skipped > 0 ? kExitPartial : kExitOk;
}

int cmd_labels(const RunConfig& cfg) {
  const CorrectnessMetric metric = parse_metric(cfg.metric);
  const auto traces = load_traces(cfg.traces);
  std::vector<std::optional<LabeledSample>> labels(traces.size());
  std::vector<std::string> problems(traces.size());
  parallel_for(traces.size(), cfg.threads, [&](std::size_t i) {
    try {
      labels[i] = label_trace(traces[i], metric);
    } catch (const Error& e) {
      problems[i] = e.what();
    }
  });
  std::vector<json> out;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (!labels[i]) {
      spdlog::warn("{}: excluded: {}", traces[i].id, problems[i]);
      ++skipped;
      continue;
    }
    json r = {{"id", labels[i]->id}, {"metric", to_string(metric)}, {"correct", labels[i]->correct}};
    if (labels[i]->ep_value) r["ep_value"] = *labels[i]->ep_value;
    out.push_back(std::move(r));
  }
  write_atomic(cfg.out, lines(out));
  return skipped > 0 ? kExitPartial : kExitOk;
}

int cmd_fit_global(const RunConfig& cfg) {
  const auto scores = read_scores(cfg.scores);
  const auto j = join(scores, read_labels(cfg.labels));
  const auto cal = fit_global(j.scores, j.labels, cfg.l2);
  json model = to_json(cal);
  model["kind"] = "global";
  model["score_kind"] = uniform_kind(scores);
  write_atomic(cfg.out, model.dump(2) + "\n");
  return kExitOk;
}

int cmd_fit_local(const RunConfig& cfg) {
  const auto scores = read_scores(cfg.scores);
  const std::string kind_name = uniform_kind(scores);
  const auto j = join(scores, read_labels(cfg.labels));
  const auto embeddings = lookup_embeddings(j.ids, embeddings_by_id(cfg.traces));
  LocalHyper hyper{cfg.min_cluster_size, cfg.min_samples, parse_backoff(cfg.backoff), cfg.n, cfg.l2};
  const auto ens = fit_local(j.scores, j.labels, embeddings, hyper, parse_score_kind(kind_name), cfg.threads);
  spdlog::info("local model: {} cluster(s), {} routed to backoff", ens.clusters.cluster_count,
               ens.backoff_clusters.size());
  write_atomic(cfg.out, to_json(ens).dump() + "\n");
  return kExitOk;
}

int cmd_apply(const RunConfig& cfg) {
  const json model = read_json(cfg.model);
  const std::string kind = model.value("kind", std::string());
  const auto scores = read_scores(cfg.scores);
  const std::string score_kind = uniform_kind(scores);
  if (model.value("score_kind", score_kind) != score_kind) {
    throw SchemaError("model was fitted on '" + model.value("score_kind", std::string()) + "' scores, input has '" +
                      score_kind + "'");
  }
  std::vector<double> calibrated(scores.size());
  if (kind == "global") {
    const auto cal = global_calibrator_from_json(model);
    for (std::size_t i = 0; i < scores.size(); ++i) calibrated[i] = predict_global(cal, scores[i].score);
  } else if (kind == "local") {
    if (cfg.traces.empty()) throw MissingEmbeddings("embeddings required: pass --traces for a local model");
    const auto ens = local_ensemble_from_json(model);
    std::vector<std::string> ids;
    for (const auto& s : scores) ids.push_back(s.id);
    const auto embeddings = lookup_embeddings(ids, embeddings_by_id(cfg.traces));
    parallel_for(scores.size(), cfg.threads, [&](std::size_t i) {
      calibrated[i] = predict_local(ens, scores[i].score, embeddings[i]);
    });
  } else {
    throw SchemaError("model file has unknown kind '" + kind + "'");
  }
  std::vector<json> out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.push_back({{"id", scores[i].id}, {"kind", score_kind}, {"score", scores[i].score},
                   {"calibrated", calibrated[i]}});
  }
  write_atomic(cfg.out, lines(out));
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg) {
  const auto j = join(read_scores(cfg.calibrated), read_labels(cfg.labels), true);
  const auto report = reliability_table(j.calibrated, j.labels, cfg.bins);
  json out = to_json(report);
  if (report.degenerate) {
    out["note"] = "single-bin collapse: ece and brier ignored per protocol";
    spdlog::warn("predictions collapse into a single bin; ece and brier are not meaningful");
  }
  if (!cfg.csv.empty()) {
    std::ostringstream csv;
    csv.precision(17);
    csv << "index,lower,upper,count,mean_confidence,accuracy\n";
    for (const auto& b : report.bins) {
      csv << b.index << ',' << b.lower << ',' << b.upper << ',' << b.count << ',' << b.mean_confidence << ','
          << b.accuracy << '\n';
    }
    write_atomic(cfg.csv, csv.str());
  }
  write_atomic(cfg.out, out.dump(2) + "\n");
  return report.degenerate ? kExitDegenerate : kExitOk;
}

int cmd_stats(const RunConfig& cfg) {
  const auto j = join(read_scores(cfg.scores), read_labels(cfg.labels));
  json out;
  out["median_skewness"] = nullptr;
  if (!cfg.traces.empty()) {
    const auto traces = load_traces(cfg.traces);
    std::unordered_map<std::string, const GenerationTrace*> by_id;
    for (const auto& t : traces) by_id.emplace(t.id, &t);
    std::vector<GenerationTrace> selected;
    for (const auto& id : j.ids) {
      if (auto it = by_id.find(id); it != by_id.end()) selected.push_back(*it->second);
    }
    if (!selected.empty()) out["median_skewness"] = median_skewness(selected);
  }
  std::vector<double> correct, incorrect;
  for (std::size_t i = 0; i < j.scores.size(); ++i) (j.labels[i] ? correct : incorrect).push_back(j.scores[i]);
  out["n_correct"] = correct.size();
  out["n_incorrect"] = incorrect.size();
  out["w1"] = nullptr;
  out["tau_b"] = nullptr;
  if (!correct.empty() && !incorrect.empty()) out["w1"] = wasserstein1(correct, incorrect);
  try {
    out["tau_b"] = kendall_tau_b(j.scores, j.labels);
  } catch (const DegenerateInput& e) {
    spdlog::warn("tau_b undefined: {}", e.what());
  }
  const std::string text = out.dump(2) + "\n";
  if (cfg.out.empty()) {
    std::cout << text;
  } else {
    write_atomic(cfg.out, text);
  }
  return kExitOk;
}

int cmd_grid_search(const RunConfig& cfg) {
  const auto scores = read_scores(cfg.scores);
  const ScoreKind kind = parse_score_kind(uniform_kind(scores));
  const auto j = join(scores, read_labels(cfg.labels));
  const auto embeddings = lookup_embeddings(j.ids, embeddings_by_id(cfg.traces));

  Dataset train, valid;
  if (!cfg.valid_scores.empty() || !cfg.valid_labels.empty() || !cfg.valid_traces.empty()) {
    if (cfg.valid_scores.empty() || cfg.valid_labels.empty() || cfg.valid_traces.empty()) {
      throw Error("--valid-scores, --valid-labels and --valid-traces must be given together");
    }
    std::vector<std::size_t> all(j.ids.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    train = make_dataset(j, embeddings, all);
    const auto vj = join(read_scores(cfg.valid_scores), read_labels(cfg.valid_labels));
    const auto vemb = lookup_embeddings(vj.ids, embeddings_by_id(cfg.valid_traces));
    std::vector<std::size_t> vall(vj.ids.size());
    std::iota(vall.begin(), vall.end(), std::size_t{0});
    valid = make_dataset(vj, vemb, vall);
  } else {
    if (!(cfg.valid_frac > 0.0 && cfg.valid_frac < 1.0)) throw Error("--valid-frac must be in (0, 1)");
    std::vector<std::size_t> order(j.ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto ha = fnv1a(j.ids[a]), hb = fnv1a(j.ids[b]);
      return ha != hb ? ha < hb : j.ids[a] < j.ids[b];
    });
    const auto n_valid = static_cast<std::size_t>(std::ceil(cfg.valid_frac * static_cast<double>(order.size())));
    std::vector<std::size_t> train_rows(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_valid));
    std::vector<std::size_t> valid_rows(order.end() - static_cast<std::ptrdiff_t>(n_valid), order.end());
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(valid_rows.begin(), valid_rows.end());
    train = make_dataset(j, embeddings, train_rows);
    valid = make_dataset(j, embeddings, valid_rows);
  }

  GridSpec grid;
  grid.min_cluster_sizes = cfg.grid_cluster_sizes;
  grid.min_samples = cfg.grid_min_samples;
  grid.backoffs.clear();
  for (const auto& b : cfg.grid_backoffs) grid.backoffs.push_back(parse_backoff(b));
  grid.n = cfg.n;
  grid.l2 = cfg.l2;
  grid.bins = cfg.bins;
  const auto result = grid_search(train, valid, grid, kind, cfg.threads);
  json out = to_json(result);
  out["n_train"] = train.scores.size();
  out["n_valid"] = valid.scores.size();
  if (!cfg.model_out.empty()) {
    const auto best = fit_local(train.scores, train.labels, train.embeddings, result.best_hyper, kind, cfg.threads);
    write_atomic(cfg.model_out, to_json(best).dump() + "\n");
  }
  write_atomic(cfg.out, out.dump(2) + "\n");
  return kExitOk;
}

int cmd_synth(const RunConfig& cfg) {
  SynthOptions options;
  options.count = cfg.synth_count;
  options.seed = cfg.seed;
  std::ostringstream out;
  write_traces(out, synthesize_traces(options));
  write_atomic(cfg.out, out.str());
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  RunConfig cfg;
  CLI::App app{"recal: confidence scoring and calibration for code-revision traces", "recal"};
  app.require_subcommand(1);
  app.add_option("--threads", cfg.threads, "Worker threads")->check(CLI::Range(1u, 256u));
  app.add_option("--log-level", cfg.log_level, "error|warn|info|debug (overrides RECAL_LOG)");

  auto* score = app.add_subcommand("score", "Compute a confidence score per trace");
  score->add_option("--traces", cfg.traces)->required();
  score->add_option("--score", cfg.score_kind, "sl_norm|avg|min|low_k|attn_w")->required();
  score->add_option("--out", cfg.out)->required();

  auto* labels = app.add_subcommand("labels", "Compute correctness labels");
  labels->add_option("--traces", cfg.traces)->required();
  labels->add_option("--metric", cfg.metric, "em|ep-plus|cp")->required();
  labels->add_option("--out", cfg.out)->required();

  auto* fit_g = app.add_subcommand("fit-global", "Fit a global Platt calibrator");
  fit_g->add_option("--scores", cfg.scores)->required();
  fit_g->add_option("--labels", cfg.labels)->required();
  fit_g->add_option("--l2", cfg.l2)->check(CLI::NonNegativeNumber);
  fit_g->add_option("--out", cfg.out)->required();

  auto* fit_l = app.add_subcommand("fit-local", "Fit a local (clustered) Platt ensemble");
  fit_l->add_option("--traces", cfg.traces)->required();
  fit_l->add_option("--scores", cfg.scores)->required();
  fit_l->add_option("--labels", cfg.labels)->required();
  fit_l->add_option("--min-cluster-size", cfg.min_cluster_size)->check(CLI::Range(std::size_t{2}, std::size_t{1} << 30));
  fit_l->add_option("--min-samples", cfg.min_samples)->check(CLI::Range(std::size_t{1}, std::size_t{1} << 30));
  fit_l->add_option("--backoff", cfg.backoff, "global|uncalibrated");
  fit_l->add_option("--n", cfg.n, "Projection dimension");
  fit_l->add_option("--l2", cfg.l2)->check(CLI::NonNegativeNumber);
  fit_l->add_option("--out", cfg.out)->required();

  auto* apply = app.add_subcommand("apply", "Apply a fitted model to scores");
  apply->add_option("--model", cfg.model)->required();
  apply->add_option("--scores", cfg.scores)->required();
  apply->add_option("--traces", cfg.traces, "Needed for local models");
  apply->add_option("--out", cfg.out)->required();

  auto* eval = app.add_subcommand("eval", "Evaluate calibration");
  eval->add_option("--calibrated", cfg.calibrated)->required();
  eval->add_option("--labels", cfg.labels)->required();
  eval->add_option("--bins", cfg.bins)->check(CLI::Range(std::size_t{1}, std::size_t{1000}));
  eval->add_option("--out", cfg.out)->required();
  eval->add_option("--csv", cfg.csv, "Per-bin reliability table");

  auto* stats = app.add_subcommand("stats", "Descriptive statistics of scores vs labels");
  stats->add_option("--scores", cfg.scores)->required();
  stats->add_option("--labels", cfg.labels)->required();
  stats->add_option("--traces", cfg.traces, "Enables median token skewness");
  stats->add_option("--out", cfg.out, "Write JSON here instead of stdout");

  auto* grid = app.add_subcommand("grid-search", "Search local calibration hyperparameters");
  grid->add_option("--traces", cfg.traces)->required();
  grid->add_option("--scores", cfg.scores)->required();
  grid->add_option("--labels", cfg.labels)->required();
  grid->add_option("--valid-frac", cfg.valid_frac);
  grid->add_option("--valid-traces", cfg.valid_traces);
  grid->add_option("--valid-scores", cfg.valid_scores);
  grid->add_option("--valid-labels", cfg.valid_labels);
  grid->add_option("--min-cluster-sizes", cfg.grid_cluster_sizes)->delimiter(',');
  grid->add_option("--min-samples-grid", cfg.grid_min_samples)->delimiter(',');
  grid->add_option("--backoffs", cfg.grid_backoffs)->delimiter(',');
  grid->add_option("--n", cfg.n);
  grid->add_option("--l2", cfg.l2)->check(CLI::NonNegativeNumber);
  grid->add_option("--bins", cfg.bins)->check(CLI::Range(std::size_t{1}, std::size_t{1000}));
  grid->add_option("--out", cfg.out)->required();
  grid->add_option("--model-out", cfg.model_out, "Also write the winning model");

  auto* synth = app.add_subcommand("synth", "Write a synthetic trace file");
  synth->add_option("--n", cfg.synth_count);
  synth->add_option("--seed", cfg.seed);
  synth->add_option("--out", cfg.out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  }
  configure_logging(cfg.log_level);

  try {
    if (*score) return cmd_score(cfg);
    if (*labels) return cmd_labels(cfg);
    if (*fit_g) return cmd_fit_global(cfg);
    if (*fit_l) return cmd_fit_local(cfg);
    if (*apply) return cmd_apply(cfg);
    if (*eval) return cmd_eval(cfg);
    if (*stats) return cmd_stats(cfg);
    if (*grid) return cmd_grid_search(cfg);
    if (*synth) return cmd_synth(cfg);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitError;
  }
  return kExitError;
}

}  // namespace recal
