#include "recal/calibrate_global.hpp"

#include <algorithm>
#include <cmath>

#include "recal/error.hpp"

namespace recal {

namespace {

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void check_inputs(std::span<const double> scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw LengthMismatch("scores and labels differ in length");
  if (scores.empty()) throw EmptyInput("cannot fit a calibrator without samples");
}

struct Derivatives {
  double gw = 0.0, gb = 0.0;
  double hww = 0.0, hwb = 0.0, hbb = 0.0;
};

Derivatives derivatives(std::span<const double> s, const std::vector<bool>& y, double l2, double w,
                        double beta) {
  Derivatives d;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double p = sigmoid(w * s[i] + beta);
    const double r = p - (y[i] ? 1.0 : 0.0);
    const double h = p * (1.0 - p);
    d.gw += r * s[i];
    d.gb += r;
    d.hww += h * s[i] * s[i];
    d.hwb += h * s[i];
    d.hbb += h;
  }
  const double n = static_cast<double>(s.size());
  d.gw = d.gw / n + l2 / n * w;
  d.gb /= n;
  d.hww = d.hww / n + l2 / n;
  d.hwb /= n;
  d.hbb /= n;
  return d;
}

}  // namespace

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double penalized_nll(std::span<const double> scores, const std::vector<bool>& labels, double l2,
                     double w, double beta) {
  check_inputs(scores, labels);
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double z = w * scores[i] + beta;
    sum += softplus(z) - (labels[i] ? z : 0.0);
  }
  const double n = static_cast<double>(scores.size());
  return sum / n + l2 / (2.0 * n) * w * w;
}

std::pair<double, double> penalized_nll_gradient(std::span<const double> scores,
                                                 const std::vector<bool>& labels, double l2,
                                                 double w, double beta) {
  check_inputs(scores, labels);
  const auto d = derivatives(scores, labels, l2, w, beta);
  return {d.gw, d.gb};
}

GlobalCalibrator fit_global(std::span<const double> scores, const std::vector<bool>& labels,
                            const FitOptions& options) {
  check_inputs(scores, labels);
  if (options.l2 < 0.0) throw Error("l2 strength must be non-negative");

  GlobalCalibrator cal;
  cal.l2 = options.l2;
  cal.n = scores.size();
  cal.n_positive = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  const double rate = std::clamp(static_cast<double>(cal.n_positive) / static_cast<double>(cal.n),
                                 kDegenerateClamp, 1.0 - kDegenerateClamp);
  if (cal.n_positive == 0 || cal.n_positive == cal.n) {
    cal.degenerate = rate;
    return cal;
  }

  double w = 0.0;
  double beta = std::log(rate / (1.0 - rate));
  if (options.init) std::tie(w, beta) = *options.init;
  double f = penalized_nll(scores, labels, options.l2, w, beta);

  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    const auto d = derivatives(scores, labels, options.l2, w, beta);
    if (std::hypot(d.gw, d.gb) < options.gradient_tolerance) break;

    // Newton direction, falling back to steepest descent when the Hessian is
    // not safely positive definite.
    double dw = -d.gw, db = -d.gb;
    const double det = d.hww * d.hbb - d.hwb * d.hwb;
    if (d.hww > 0.0 && det > 1e-14 * (d.hww * d.hbb + 1e-300)) {
      dw = -(d.hbb * d.gw - d.hwb * d.gb) / det;
      db = -(-d.hwb * d.gw + d.hww * d.gb) / det;
    }
    const double slope = d.gw * dw + d.gb * db;
    if (slope >= 0.0) {
      dw = -d.gw;
      db = -d.gb;
    }

    // Armijo backtracking.
    double step = 1.0;
    bool moved = false;
    for (int k = 0; k < 60; ++k) {
      const double nw = w + step * dw;
      const double nb = beta + step * db;
      const double nf = penalized_nll(scores, labels, options.l2, nw, nb);
      if (nf <= f + 1e-4 * step * (d.gw * dw + d.gb * db)) {
        w = nw;
        beta = nb;
        f = nf;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  cal.w = w;
  cal.beta = beta;
  return cal;
}

double predict_global(const GlobalCalibrator& cal, double score) {
  if (cal.degenerate) return *cal.degenerate;
  return sigmoid(cal.w * score + cal.beta);
}

nlohmann::json to_json(const GlobalCalibrator& cal) {
  nlohmann::json j = {{"w", cal.w},
                      {"beta", cal.beta},
                      {"l2", cal.l2},
                      {"train_meta", {{"n", cal.n}, {"n_positive", cal.n_positive}}}};
  if (cal.degenerate) j["degenerate"] = *cal.degenerate;
  return j;
}

GlobalCalibrator global_calibrator_from_json(const nlohmann::json& j) {
  try {
    GlobalCalibrator cal;
    cal.w = j.at("w").get<double>();
    cal.beta = j.at("beta").get<double>();
    cal.l2 = j.value("l2", kDefaultL2);
    if (auto it = j.find("degenerate"); it != j.end() && !it->is_null()) {
      cal.degenerate = it->get<double>();
    }
    if (auto it = j.find("train_meta"); it != j.end()) {
      cal.n = it->value("n", std::size_t{0});
      cal.n_positive = it->value("n_positive", std::size_t{0});
    }
    return cal;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed calibrator: ") + e.what());
  }
}

}  // namespace recal
