#include "recal/trace_io.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "recal/error.hpp"

namespace recal {

namespace {

using nlohmann::json;

constexpr double kRowSumTolerance = 1e-6;
constexpr double kCausalTolerance = 1e-12;

const std::set<std::string, std::less<>> kKnownKeys = {
    "id",     "submitted_code", "ground_truth_code", "generated_code", "token_probs",
    "attention", "embedding",   "labels"};

std::string require_string(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw ParseError(line, std::string("missing or non-string field '") + key + "'");
  }
  return it->get<std::string>();
}

std::vector<double> number_array(const json& value, const char* key, std::size_t line) {
  if (!value.is_array()) throw ParseError(line, std::string("field '") + key + "' must be an array");
  std::vector<double> out;
  out.reserve(value.size());
  for (const auto& v : value) {
    if (!v.is_number()) throw ParseError(line, std::string("field '") + key + "' must hold numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

SquareMatrix SquareMatrix::identity(std::size_t n) {
  SquareMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool validate_attention(const GenerationTrace& trace) {
  if (!trace.attention) return true;
  const std::size_t t = trace.token_probs.size();
  for (const auto& layer : *trace.attention) {
    if (layer.size != t || layer.values.size() != t * t) return false;
    for (std::size_t r = 0; r < t; ++r) {
      double row_sum = 0.0;
      for (std::size_t c = 0; c < t; ++c) {
        const double a = layer(r, c);
        if (!std::isfinite(a) || a < 0.0) return false;
        if (c > r && a > kCausalTolerance) return false;
        row_sum += a;
      }
      if (std::abs(row_sum - 1.0) > kRowSumTolerance) return false;
    }
  }
  return true;
}

void validate_trace(const GenerationTrace& trace) {
  if (trace.id.empty()) throw ValidationError(trace.id, "empty id");
  if (trace.token_probs.empty()) throw ValidationError(trace.id, "token_probs must be non-empty");
  for (double p : trace.token_probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(trace.id, "probability out of range");
  }
  if (!validate_attention(trace)) {
    throw ValidationError(trace.id,
                          "attention must be T x T, non-negative, causal and row-stochastic");
  }
  if (trace.embedding) {
    if (trace.embedding->empty()) throw ValidationError(trace.id, "embedding must be non-empty");
    for (double v : *trace.embedding) {
      if (!std::isfinite(v)) throw ValidationError(trace.id, "embedding has non-finite entries");
    }
  }
}

GenerationTrace parse_trace(std::string_view text, std::size_t line) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(line, e.what());
  }
  if (!obj.is_object()) throw ParseError(line, "record is not a JSON object");

  GenerationTrace trace;
  trace.id = require_string(obj, "id", line);
  trace.submitted_code = require_string(obj, "submitted_code", line);
  trace.generated_code = require_string(obj, "generated_code", line);
  if (auto it = obj.find("ground_truth_code"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) throw ParseError(line, "field 'ground_truth_code' must be a string");
    trace.ground_truth_code = it->get<std::string>();
  }
  auto probs = obj.find("token_probs");
  if (probs == obj.end()) throw ParseError(line, "missing field 'token_probs'");
  trace.token_probs = number_array(*probs, "token_probs", line);

  if (auto it = obj.find("attention"); it != obj.end() && !it->is_null()) {
    if (!it->is_array()) throw ParseError(line, "field 'attention' must be an array of layers");
    std::vector<SquareMatrix> layers;
    for (const auto& layer : *it) {
      if (!layer.is_array()) throw ParseError(line, "attention layer must be an array of rows");
      const std::size_t n = layer.size();
      SquareMatrix m(n);
      for (std::size_t r = 0; r < n; ++r) {
        auto row = number_array(layer[r], "attention", line);
        if (row.size() != n) throw ValidationError(trace.id, "attention layer is not square");
        std::copy(row.begin(), row.end(), m.values.begin() + static_cast<std::ptrdiff_t>(r * n));
      }
      layers.push_back(std::move(m));
    }
    trace.attention = std::move(layers);
  }
  if (auto it = obj.find("embedding"); it != obj.end() && !it->is_null()) {
    trace.embedding = number_array(*it, "embedding", line);
  }
  if (auto it = obj.find("labels"); it != obj.end() && !it->is_null()) {
    if (!it->is_object()) throw ParseError(line, "field 'labels' must be an object");
    for (const auto& [name, value] : it->items()) {
      if (!value.is_boolean()) throw ParseError(line, "label '" + name + "' must be boolean");
      trace.labels.emplace(name, value.get<bool>());
    }
  }
  for (const auto& [key, _] : obj.items()) {
    if (!kKnownKeys.contains(key)) {
      spdlog::warn("line {}: ignoring unknown key '{}'", line, key);
    }
  }
  validate_trace(trace);
  return trace;
}

std::string serialize_trace(const GenerationTrace& trace) {
  json obj = json::object();
  obj["id"] = trace.id;
  obj["submitted_code"] = trace.submitted_code;
  if (trace.ground_truth_code) obj["ground_truth_code"] = *trace.ground_truth_code;
  obj["generated_code"] = trace.generated_code;
  obj["token_probs"] = trace.token_probs;
  if (trace.attention) {
    json layers = json::array();
    for (const auto& layer : *trace.attention) {
      json rows = json::array();
      for (std::size_t r = 0; r < layer.size; ++r) {
        rows.push_back(std::vector<double>(layer.values.begin() + static_cast<std::ptrdiff_t>(r * layer.size),
                                           layer.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * layer.size)));
      }
      layers.push_back(std::move(rows));
    }
    obj["attention"] = std::move(layers);
  }
  if (trace.embedding) obj["embedding"] = *trace.embedding;
  obj["labels"] = json::object();
  for (const auto& [name, value] : trace.labels) obj["labels"][name] = value;
  return obj.dump();
}

std::vector<GenerationTrace> read_traces(std::istream& in) {
  std::vector<GenerationTrace> traces;
  std::unordered_set<std::string> seen;
  std::optional<std::size_t> dim;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    auto trace = parse_trace(text, line);
    if (!seen.insert(trace.id).second) throw DuplicateId(trace.id);
    if (trace.embedding) {
      if (!dim) dim = trace.embedding->size();
      if (*dim != trace.embedding->size()) {
        throw ValidationError(trace.id, "embedding dimension " + std::to_string(trace.embedding->size()) +
                                            " differs from file dimension " + std::to_string(*dim));
      }
    }
    traces.push_back(std::move(trace));
  }
  return traces;
}

std::vector<GenerationTrace> load_traces(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace file '" + path.string() + "'");
  return read_traces(in);
}

void write_traces(std::ostream& out, const std::vector<GenerationTrace>& traces) {
  for (const auto& t : traces) out << serialize_trace(t) << '\n';
}

TraceFileStats summarize(const std::vector<GenerationTrace>& traces) {
  TraceFileStats stats;
  stats.count = traces.size();
  for (const auto& t : traces) {
    if (t.attention) ++stats.has_attention_count;
    if (t.embedding) {
      ++stats.has_embedding_count;
      if (!stats.embedding_dim) stats.embedding_dim = t.embedding->size();
    }
    if (std::find(t.token_probs.begin(), t.token_probs.end(), 0.0) != t.token_probs.end()) {
      ++stats.zero_probability_count;
    }
  }
  return stats;
}

}  // namespace recal
