#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

namespace recal {

inline constexpr double kDegenerateClamp = 1e-6;
inline constexpr double kDefaultL2 = 1.0;

// Univariate Platt calibrator sigma(w * score + beta). When the training labels
// were single-class, `degenerate` holds the clamped positive rate and w/beta
// are ignored.
struct GlobalCalibrator {
  double w = 0.0;
  double beta = 0.0;
  std::optional<double> degenerate;
  double l2 = kDefaultL2;
  std::size_t n = 0;
  std::size_t n_positive = 0;

  bool operator==(const GlobalCalibrator&) const = default;
};

struct FitOptions {
  double l2 = kDefaultL2;
  double gradient_tolerance = 1e-8;
  std::size_t max_iterations = 1000;
  // Starting point; defaults to w = 0, beta = logit(clamped label rate).
  std::optional<std::pair<double, double>> init;
};

double sigmoid(double z);

// Mean negative log-likelihood plus (l2 / 2n) w^2; the intercept is not penalised.
double penalized_nll(std::span<const double> scores, const std::vector<bool>& labels, double l2,
                     double w, double beta);
std::pair<double, double> penalized_nll_gradient(std::span<const double> scores,
                                                 const std::vector<bool>& labels, double l2,
                                                 double w, double beta);

GlobalCalibrator fit_global(std::span<const double> scores, const std::vector<bool>& labels,
                            const FitOptions& options = {});
inline GlobalCalibrator fit_global(std::span<const double> scores, const std::vector<bool>& labels,
                                   double l2) {
  FitOptions options;
  options.l2 = l2;
  return fit_global(scores, labels, options);
}

double predict_global(const GlobalCalibrator& cal, double score);

nlohmann::json to_json(const GlobalCalibrator& cal);
GlobalCalibrator global_calibrator_from_json(const nlohmann::json& j);

}  // namespace recal
