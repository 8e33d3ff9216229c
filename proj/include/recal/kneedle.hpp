#pragma once

#include <cstddef>
#include <span>

namespace recal {

// Knee of a sorted curve. `k` counts the points up to and including the knee
// (1-based), so it can be used directly as "take the first k".
struct KneeResult {
  std::size_t k = 1;
  double deviation = 0.0;
};

// Offline Kneedle with sensitivity 0 on an ascending, concave curve: the
// global argmax of (normalized y) - (normalized x). Ties go to the smallest
// index; n <= 2 and flat curves give k = 1.
KneeResult kneedle_concave_increasing(std::span<const double> y);

// Same for a descending, convex curve, measured against the anti-diagonal.
KneeResult kneedle_convex_decreasing(std::span<const double> y);

}  // namespace recal
