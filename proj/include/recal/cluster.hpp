#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

namespace recal {

using Vector = std::vector<double>;
using FeatureVector = std::vector<double>;

inline constexpr std::size_t kDefaultProjectionDim = 20;

// Linear projection onto the leading principal components of the training
// embeddings. Component signs are fixed so that each component's
// largest-magnitude coordinate is positive.
struct Projection {
  Vector mean;
  std::vector<Vector> components;  // n_effective rows, each of input dimension
  std::vector<double> explained_variance;

  std::size_t input_dim() const { return mean.size(); }
  std::size_t output_dim() const { return components.size(); }
  Vector project(std::span<const double> embedding) const;
};

Projection fit_projection(std::span<const Vector> embeddings, std::size_t n);

// Per-dimension z-scoring; a zero scale marks a constant dimension that maps to 0.
struct Standardization {
  Vector mean;
  Vector scale;
};

// Projection followed by appending the raw score and z-scoring every dimension
// with statistics taken from the training set.
struct FeatureSpace {
  Projection projection;
  Standardization standardization;

  std::size_t dim() const { return standardization.mean.size(); }
  FeatureVector feature(std::span<const double> embedding, double score) const;
};

FeatureSpace fit_feature_space(Projection projection, std::span<const Vector> embeddings,
                               std::span<const double> scores);
std::vector<FeatureVector> build_features(const FeatureSpace& space,
                                          std::span<const Vector> embeddings,
                                          std::span<const double> scores);

struct ClusterModel {
  std::size_t min_cluster_size = 50;
  std::size_t min_samples = 5;
  std::vector<FeatureVector> training_features;
  std::vector<int> labels;  // -1 is noise, clusters are dense from 0
  std::size_t cluster_count = 0;
};

struct MstEdge {
  std::size_t a = 0;
  std::size_t b = 0;
  double weight = 0.0;
};

double euclidean(std::span<const double> a, std::span<const double> b);

// Distance to the min_samples-th nearest neighbour, not counting the point itself.
// min_samples is clamped to n - 1.
std::vector<double> core_distances(std::span<const FeatureVector> points, std::size_t min_samples,
                                   unsigned workers = 1);

// Exact minimum spanning tree of the mutual reachability graph (Prim, O(n^2)).
std::vector<MstEdge> mutual_reachability_mst(std::span<const FeatureVector> points,
                                             std::span<const double> core, unsigned workers = 1);

// HDBSCAN with excess-of-mass selection. The root may be selected as a single
// cluster; in that case points whose core distance is a far outlier (log scale,
// beyond Q3 + 3 IQR) are labelled noise. Throws TooFewPoints when there are
// fewer than min_cluster_size points.
ClusterModel hdbscan(std::span<const FeatureVector> features, std::size_t min_cluster_size,
                     std::size_t min_samples, unsigned workers = 1);

// Label of the nearest training point (ties to the lowest index).
int assign(const ClusterModel& model, std::span<const double> feature);

nlohmann::json to_json(const FeatureSpace& space);
FeatureSpace feature_space_from_json(const nlohmann::json& j);

}  // namespace recal
