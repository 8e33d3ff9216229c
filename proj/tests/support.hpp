#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "recal/synth.hpp"
#include "recal/trace_io.hpp"

namespace testing_support {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("recal_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Random causal, row-stochastic layer of size t.
inline recal::SquareMatrix random_causal_layer(recal::Rng& rng, std::size_t t) {
  recal::SquareMatrix m(t);
  for (std::size_t r = 0; r < t; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c <= r; ++c) {
      m(r, c) = rng.uniform() + 1e-3;
      sum += m(r, c);
    }
    for (std::size_t c = 0; c <= r; ++c) m(r, c) /= sum;
  }
  return m;
}

inline std::vector<recal::SquareMatrix> random_attention(recal::Rng& rng, std::size_t t, std::size_t layers) {
  std::vector<recal::SquareMatrix> out;
  for (std::size_t l = 0; l < layers; ++l) out.push_back(random_causal_layer(rng, t));
  return out;
}

// Token probabilities skewed toward 1 with a few low values, as in real traces.
inline std::vector<double> random_probs(recal::Rng& rng, std::size_t t) {
  std::vector<double> p(t);
  for (auto& v : p) v = rng.bernoulli(0.2) ? rng.uniform(0.01, 0.6) : rng.uniform(0.7, 1.0);
  return p;
}

}  // namespace testing_support
