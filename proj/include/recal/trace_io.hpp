#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace recal {

// Row-major T x T matrix, row index = generated position.
struct SquareMatrix {
  std::size_t size = 0;
  std::vector<double> values;

  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t n, double fill = 0.0) : size(n), values(n * n, fill) {}
  static SquareMatrix identity(std::size_t n);

  double& operator()(std::size_t r, std::size_t c) { return values[r * size + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * size + c]; }
  bool operator==(const SquareMatrix&) const = default;
};

// One code-revision sample as produced by a model run.
struct GenerationTrace {
  std::string id;
  std::string submitted_code;
  std::optional<std::string> ground_truth_code;
  std::string generated_code;
  std::vector<double> token_probs;
  // Head-averaged attention, one matrix per layer.
  std::optional<std::vector<SquareMatrix>> attention;
  std::optional<std::vector<double>> embedding;
  std::map<std::string, bool> labels;

  bool operator==(const GenerationTrace&) const = default;
};

struct TraceFileStats {
  std::size_t count = 0;
  std::optional<std::size_t> embedding_dim;
  std::size_t has_attention_count = 0;
  std::size_t has_embedding_count = 0;
  // Number of traces containing at least one token probability of exactly 0.
  std::size_t zero_probability_count = 0;
};

bool validate_attention(const GenerationTrace& trace);

// Throws ValidationError when the trace breaks a record-level invariant.
void validate_trace(const GenerationTrace& trace);

// Parses a single JSONL record. `line` is used for diagnostics only.
GenerationTrace parse_trace(std::string_view text, std::size_t line = 1);
std::string serialize_trace(const GenerationTrace& trace);

std::vector<GenerationTrace> read_traces(std::istream& in);
std::vector<GenerationTrace> load_traces(const std::filesystem::path& path);
void write_traces(std::ostream& out, const std::vector<GenerationTrace>& traces);

TraceFileStats summarize(const std::vector<GenerationTrace>& traces);

}  // namespace recal
