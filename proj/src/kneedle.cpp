#include "recal/kneedle.hpp"

#include <algorithm>

namespace recal {

namespace {

enum class Orientation { ConcaveIncreasing, ConvexDecreasing };

KneeResult find_knee(std::span<const double> y, Orientation orientation) {
  const std::size_t n = y.size();
  if (n <= 2) return {};
  const auto [lo_it, hi_it] = std::minmax_element(y.begin(), y.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  if (!(range > 0.0)) return {};

  const double last = static_cast<double>(n - 1);
  KneeResult best{1, -1.0};
  bool first = true;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) / last;
    const double yn = (y[i] - lo) / range;
    const double dev = orientation == Orientation::ConcaveIncreasing ? yn - x : (1.0 - x) - yn;
    if (first || dev > best.deviation) {
      best = {i + 1, dev};
      first = false;
    }
  }
  return best;
}

}  // namespace

KneeResult kneedle_concave_increasing(std::span<const double> y) {
  return find_knee(y, Orientation::ConcaveIncreasing);
}

KneeResult kneedle_convex_decreasing(std::span<const double> y) {
  return find_knee(y, Orientation::ConvexDecreasing);
}

}  // namespace recal
