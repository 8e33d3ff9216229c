#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "recal/trace_io.hpp"

namespace recal {

enum class CorrectnessMetric { EM, EPPlus, CP };

std::string_view to_string(CorrectnessMetric metric);
CorrectnessMetric parse_metric(std::string_view name);  // "em", "ep-plus", "cp"

struct LabeledSample {
  std::string id;
  CorrectnessMetric metric = CorrectnessMetric::EM;
  bool correct = false;
  std::optional<double> ep_value;  // present iff metric == EPPlus
};

// Trims and collapses whitespace runs (space, tab, CR, LF) to one space.
std::string normalize_whitespace(std::string_view text);
bool exact_match(std::string_view generated, std::string_view ground_truth);

// Unit-cost Levenshtein distance over Unicode code points (UTF-8 input;
// invalid bytes count as single characters).
std::size_t levenshtein(std::string_view a, std::string_view b);

// (D(submitted, truth) - D(candidate, truth)) / D(submitted, truth) on raw text.
// Throws SubmittedEqualsTruth when the submitted code already equals the truth.
double edit_progress(std::string_view submitted, std::string_view candidate,
                     std::string_view ground_truth);

inline bool ep_plus(double ep) { return ep > 0.0; }

// Builds the label for one trace. Throws MissingGroundTruth, SubmittedEqualsTruth
// or ValidationError (missing "cp" label) when the metric is undefined.
LabeledSample label_trace(const GenerationTrace& trace, CorrectnessMetric metric);

}  // namespace recal
