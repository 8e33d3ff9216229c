#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "recal/trace_io.hpp"

namespace recal {

// splitmix64-seeded xoshiro256** with its own float conversions, so synthetic
// data is identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n);  // [0, n)
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t s_[4];
};

struct SynthOptions {
  std::size_t count = 500;
  std::uint64_t seed = 1;
  std::size_t embedding_dim = 8;
  std::size_t layers = 2;
  std::size_t min_tokens = 4;
  std::size_t max_tokens = 24;
  double attention_fraction = 0.9;
};

// Code-revision traces with token probabilities, causal attention,
// three embedding groups, ground truth and a "cp" label. Embeddings lie in a
// 3-dimensional subspace, one latent axis per group.
std::vector<GenerationTrace> synthesize_traces(const SynthOptions& options);

// One sample from a mixture whose clusters are miscalibrated in different
// directions: cluster c has P(correct) = sigmoid(w_c * score + b_c) with
// w = {6, 2, -4}, b = {-3, 2, -1} and scores uniform on [0,1], [0,0.3], [0.3,0.7].
// Cluster c sits 10 units along latent axis c of a rank-3 embedding.
struct HeteroSample {
  int cluster = 0;
  double score = 0.0;
  bool label = false;
  std::vector<double> embedding;
};

std::vector<HeteroSample> heterogeneous_samples(std::size_t count, std::uint64_t seed,
                                                std::size_t embedding_dim = 16);

}  // namespace recal
