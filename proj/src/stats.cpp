#include "recal/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "recal/error.hpp"

namespace recal {

namespace {

// Sorts v with merge sort and returns the number of inversions (strictly
// decreasing pairs); equal elements are not counted.
std::int64_t count_inversions(std::vector<double>& v) {
  std::int64_t swaps = 0;
  std::vector<double> buffer(v.size());
  for (std::size_t width = 1; width < v.size(); width *= 2) {
    for (std::size_t lo = 0; lo < v.size(); lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, v.size());
      const std::size_t hi = std::min(lo + 2 * width, v.size());
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (v[j] < v[i]) {
          swaps += static_cast<std::int64_t>(mid - i);
          buffer[k++] = v[j++];
        } else {
          buffer[k++] = v[i++];
        }
      }
      while (i < mid) buffer[k++] = v[i++];
      while (j < hi) buffer[k++] = v[j++];
    }
    std::swap(v, buffer);
  }
  return swaps;
}

template <typename Eq>
std::int64_t tied_pairs(std::size_t n, Eq equal_to_previous) {
  std::int64_t pairs = 0;
  std::int64_t run = 1;
  for (std::size_t i = 1; i < n; ++i) {
    if (equal_to_previous(i)) {
      ++run;
    } else {
      pairs += run * (run - 1) / 2;
      run = 1;
    }
  }
  return pairs + run * (run - 1) / 2;
}

}  // namespace

double sample_skewness(std::span<const double> token_probs) {
  if (token_probs.empty()) throw EmptyInput("skewness of an empty sequence");
  const auto [lo, hi] = std::minmax_element(token_probs.begin(), token_probs.end());
  if (*lo == *hi) return 0.0;
  const double n = static_cast<double>(token_probs.size());
  const double mean = std::accumulate(token_probs.begin(), token_probs.end(), 0.0) / n;
  double m2 = 0.0;
  for (double p : token_probs) m2 += (p - mean) * (p - mean);
  const double s = std::sqrt(m2 / n);
  if (!(s > 0.0)) return 0.0;
  double sum = 0.0;
  for (double p : token_probs) {
    const double z = (p - mean) / s;
    sum += z * z * z;
  }
  return sum / n;
}

double lower_median(std::vector<double> values) {
  if (values.empty()) throw EmptyInput("median of an empty set");
  const std::size_t mid = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  return values[mid];
}

double median_skewness(std::span<const GenerationTrace> traces) {
  if (traces.empty()) throw EmptyInput("median skewness needs at least one trace");
  std::vector<double> values;
  values.reserve(traces.size());
  for (const auto& t : traces) values.push_back(sample_skewness(t.token_probs));
  return lower_median(std::move(values));
}

double wasserstein1(std::span<const double> xs, std::span<const double> ys) {
  if (xs.empty() || ys.empty()) throw EmptyInput("wasserstein distance needs two non-empty samples");
  std::vector<double> a(xs.begin(), xs.end());
  std::vector<double> b(ys.begin(), ys.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());

  // Integrate |F_a - F_b| between consecutive support points.
  std::size_t i = 0, j = 0;
  double total = 0.0;
  double current = std::min(a.front(), b.front());
  while (i < a.size() || j < b.size()) {
    const double next = (j >= b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
    if (next > current) {
      const double diff = std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb);
      total += diff * (next - current);
      current = next;
    }
    while (i < a.size() && a[i] == next) ++i;
    while (j < b.size() && b[j] == next) ++j;
  }
  return total;
}

KendallCounts kendall_counts(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw LengthMismatch("kendall tau-b needs equal-length inputs");
  const std::size_t n = x.size();
  if (n < 2) throw DegenerateInput("kendall tau-b needs at least two observations");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });

  KendallCounts c;
  const auto nn = static_cast<std::int64_t>(n);
  c.n0 = nn * (nn - 1) / 2;
  c.n1 = tied_pairs(n, [&](std::size_t i) { return x[order[i]] == x[order[i - 1]]; });
  const std::int64_t joint = tied_pairs(n, [&](std::size_t i) {
    return x[order[i]] == x[order[i - 1]] && y[order[i]] == y[order[i - 1]];
  });

  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
  const std::int64_t discordant = count_inversions(ys);
  c.n2 = tied_pairs(n, [&](std::size_t i) { return ys[i] == ys[i - 1]; });
  c.concordant_minus_discordant = c.n0 - c.n1 - c.n2 + joint - 2 * discordant;
  return c;
}

double tau_b_from_counts(const KendallCounts& c) {
  if (c.n0 == c.n1 || c.n0 == c.n2) {
    throw DegenerateInput("kendall tau-b undefined: one variable is constant");
  }
  return static_cast<double>(c.concordant_minus_discordant) /
         std::sqrt(static_cast<double>(c.n0 - c.n1) * static_cast<double>(c.n0 - c.n2));
}

double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  return tau_b_from_counts(kendall_counts(x, y));
}

double kendall_tau_b(std::span<const double> scores, const std::vector<bool>& labels) {
  std::vector<double> y(labels.size());
  std::transform(labels.begin(), labels.end(), y.begin(), [](bool b) { return b ? 1.0 : 0.0; });
  return kendall_tau_b(scores, y);
}

SeparationReport separation(std::span<const double> scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw LengthMismatch("scores and labels differ in length");
  std::vector<double> correct, incorrect;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    (labels[i] ? correct : incorrect).push_back(scores[i]);
  }
  SeparationReport r;
  r.n_correct = correct.size();
  r.n_incorrect = incorrect.size();
  r.w1 = wasserstein1(correct, incorrect);
  r.tau_b = kendall_tau_b(scores, labels);
  return r;
}

}  // namespace recal
