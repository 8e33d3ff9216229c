#include "recal/synth.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "recal/calibrate_global.hpp"
#include "recal/error.hpp"

namespace recal {

namespace {

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

std::string pad_id(std::size_t i) {
  std::string digits = std::to_string(i);
  return "s" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

SquareMatrix random_causal_layer(Rng& rng, std::size_t t) {
  SquareMatrix m(t);
  for (std::size_t r = 0; r < t; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c <= r; ++c) {
      m(r, c) = 0.05 + rng.uniform();
      sum += m(r, c);
    }
    for (std::size_t c = 0; c <= r; ++c) m(r, c) /= sum;
  }
  return m;
}

constexpr std::size_t kLatentDim = 3;

// Fixed orthonormal embedding of the latent space, independent of the data seed.
std::vector<std::array<double, kLatentDim>> mixing_matrix(std::size_t dim) {
  if (dim < kLatentDim) throw Error("embedding dimension must be at least 3");
  Rng rng(0x3C6EF372FE94F82Bull);
  std::vector<std::array<double, kLatentDim>> m(dim);
  for (auto& row : m)
    for (auto& v : row) v = rng.normal();
  for (std::size_t k = 0; k < kLatentDim; ++k) {
    for (std::size_t j = 0; j < k; ++j) {
      double dot = 0.0;
      for (const auto& row : m) dot += row[k] * row[j];
      for (auto& row : m) row[k] -= dot * row[j];
    }
    double norm = 0.0;
    for (const auto& row : m) norm += row[k] * row[k];
    for (auto& row : m) row[k] /= std::sqrt(norm);
  }
  return m;
}

// Group g sits `separation` along latent axis g with unit Gaussian spread; the
// embedding is the latent point mapped through `mixing`, so it has rank 3.
std::vector<double> group_embedding(Rng& rng, const std::vector<std::array<double, kLatentDim>>& mixing,
                                    std::size_t group, double separation) {
  std::array<double, kLatentDim> latent{};
  for (std::size_t k = 0; k < kLatentDim; ++k) latent[k] = rng.normal() + (k == group ? separation : 0.0);
  std::vector<double> out(mixing.size(), 0.0);
  for (std::size_t d = 0; d < mixing.size(); ++d)
    for (std::size_t k = 0; k < kLatentDim; ++k) out[d] += mixing[d][k] * latent[k];
  return out;
}

}  // namespace

Rng::Rng(std::uint64_t seed) {
  for (auto& s : s_) {
    seed += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = seed;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    s = z ^ (z >> 31);
  }
}

std::uint64_t Rng::next() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::size_t Rng::below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

double Rng::normal() {
  // Box-Muller; one draw per call keeps the stream position simple.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<GenerationTrace> synthesize_traces(const SynthOptions& options) {
  Rng rng(options.seed);
  const auto mixing = mixing_matrix(options.embedding_dim);
  std::vector<GenerationTrace> traces;
  traces.reserve(options.count);
  const double group_slope[3] = {8.0, 4.0, -3.0};
  for (std::size_t i = 0; i < options.count; ++i) {
    GenerationTrace t;
    t.id = pad_id(i);
    const std::size_t group = i % 3;

    const std::size_t len = options.min_tokens + rng.below(options.max_tokens - options.min_tokens + 1);
    t.token_probs.resize(len);
    for (double& p : t.token_probs) p = 1.0 - 0.25 * std::pow(rng.uniform(), 4.0);
    const std::size_t risky = rng.below(4);
    for (std::size_t r = 0; r < risky; ++r) t.token_probs[rng.below(len)] = rng.uniform(0.05, 0.7);

    double lowest = 1.0;
    for (double p : t.token_probs) lowest = std::min(lowest, p);
    const bool correct = rng.bernoulli(sigmoid(group_slope[group] * (lowest - 0.5)));

    const std::size_t a = rng.below(100);
    const std::size_t b = rng.below(100);
    const std::string var = "x" + std::to_string(i);
    t.submitted_code = "if (" + var + " > " + std::to_string(a) + ") { return " + std::to_string(b) + "; }";
    t.ground_truth_code = "if (" + var + " >= " + std::to_string(a) + ") { return " + std::to_string(b + 1) + "; }";
    if (correct) {
      t.generated_code = rng.bernoulli(0.3) ? "if (" + var + " >=  " + std::to_string(a) + ")\n{ return " +
                                                  std::to_string(b + 1) + "; }"
                                            : *t.ground_truth_code;
    } else {
      switch (rng.below(3)) {
        case 0: t.generated_code = t.submitted_code; break;
        case 1:
          t.generated_code = "if (" + var + " >= " + std::to_string(a) + ") { return " + std::to_string(b) + "; }";
          break;
        default: t.generated_code = "if (" + var + " < " + std::to_string(a) + ") { return 0; }"; break;
      }
    }
    t.labels["cp"] = correct ? rng.bernoulli(0.9) : rng.bernoulli(0.2);

    if (rng.bernoulli(options.attention_fraction)) {
      std::vector<SquareMatrix> layers;
      for (std::size_t l = 0; l < options.layers; ++l) layers.push_back(random_causal_layer(rng, len));
      t.attention = std::move(layers);
    }
    t.embedding = group_embedding(rng, mixing, static_cast<std::size_t>(group), 6.0);
    traces.push_back(std::move(t));
  }
  return traces;
}

std::vector<HeteroSample> heterogeneous_samples(std::size_t count, std::uint64_t seed,
                                                std::size_t embedding_dim) {
  constexpr double kSlope[3] = {6.0, 2.0, -4.0};
  constexpr double kIntercept[3] = {-3.0, 2.0, -1.0};
  constexpr double kLow[3] = {0.0, 0.0, 0.3};
  constexpr double kHigh[3] = {1.0, 0.3, 0.7};
  Rng rng(seed);
  const auto mixing = mixing_matrix(embedding_dim);
  std::vector<HeteroSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    HeteroSample s;
    s.cluster = static_cast<int>(i % 3);
    const auto c = static_cast<std::size_t>(s.cluster);
    s.score = rng.uniform(kLow[c], kHigh[c]);
    s.label = rng.bernoulli(sigmoid(kSlope[c] * s.score + kIntercept[c]));
    s.embedding = group_embedding(rng, mixing, c, 10.0);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace recal
