#include "recal/correctness.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "recal/error.hpp"

namespace recal {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

std::u32string decode_utf8(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    char32_t cp = lead;
    if (lead >= 0xF0 && lead <= 0xF4) {
      len = 4;
      cp = lead & 0x07u;
    } else if (lead >= 0xE0) {
      len = 3;
      cp = lead & 0x0Fu;
    } else if (lead >= 0xC2 && lead < 0xE0) {
      len = 2;
      cp = lead & 0x1Fu;
    }
    bool valid = len > 1 && i + len <= text.size();
    for (std::size_t j = 1; valid && j < len; ++j) {
      const auto cont = static_cast<unsigned char>(text[i + j]);
      if ((cont & 0xC0u) != 0x80u) valid = false;
      cp = (cp << 6) | (cont & 0x3Fu);
    }
    if (!valid) {
      // Raw byte, offset past the code point range so it never aliases one.
      out.push_back(lead < 0x80 ? char32_t{lead} : char32_t{0x110000u + lead});
      ++i;
    } else {
      out.push_back(cp);
      i += len;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(CorrectnessMetric metric) {
  switch (metric) {
    case CorrectnessMetric::EM: return "em";
    case CorrectnessMetric::EPPlus: return "ep-plus";
    case CorrectnessMetric::CP: return "cp";
  }
  return "unknown";
}

CorrectnessMetric parse_metric(std::string_view name) {
  for (auto m : {CorrectnessMetric::EM, CorrectnessMetric::EPPlus, CorrectnessMetric::CP}) {
    if (to_string(m) == name) return m;
  }
  throw Error("unknown correctness metric '" + std::string(name) + "'");
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

bool exact_match(std::string_view generated, std::string_view ground_truth) {
  return normalize_whitespace(generated) == normalize_whitespace(ground_truth);
}

std::size_t levenshtein(std::string_view a_text, std::string_view b_text) {
  std::u32string a = decode_utf8(a_text);
  std::u32string b = decode_utf8(b_text);
  if (a.size() < b.size()) std::swap(a, b);
  // b is the shorter string; one DP row of |b| + 1 cells.
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diagonal = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t above = row[j];
      const std::size_t substitute = diagonal + (a[i - 1] == b[j - 1] ? 0 : 1);
      row[j] = std::min({above + 1, row[j - 1] + 1, substitute});
      diagonal = above;
    }
  }
  return row[b.size()];
}

double edit_progress(std::string_view submitted, std::string_view candidate,
                     std::string_view ground_truth) {
  const std::size_t total = levenshtein(submitted, ground_truth);
  if (total == 0) {
    throw SubmittedEqualsTruth("submitted code equals ground truth; edit progress undefined");
  }
  const std::size_t remaining = levenshtein(candidate, ground_truth);
  return (static_cast<double>(total) - static_cast<double>(remaining)) / static_cast<double>(total);
}

LabeledSample label_trace(const GenerationTrace& trace, CorrectnessMetric metric) {
  LabeledSample sample{trace.id, metric, false, std::nullopt};
  switch (metric) {
    case CorrectnessMetric::EM:
      if (!trace.ground_truth_code) throw MissingGroundTruth("trace '" + trace.id + "' has no ground truth");
      sample.correct = exact_match(trace.generated_code, *trace.ground_truth_code);
      break;
    case CorrectnessMetric::EPPlus: {
      if (!trace.ground_truth_code) throw MissingGroundTruth("trace '" + trace.id + "' has no ground truth");
      const double ep = edit_progress(trace.submitted_code, trace.generated_code, *trace.ground_truth_code);
      sample.ep_value = ep;
      sample.correct = ep_plus(ep);
      break;
    }
    case CorrectnessMetric::CP: {
      auto it = trace.labels.find("cp");
      if (it == trace.labels.end()) throw ValidationError(trace.id, "missing 'cp' label");
      sample.correct = it->second;
      break;
    }
  }
  return sample;
}

}  // namespace recal
