#include "recal/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "recal/error.hpp"
#include "recal/parallel.hpp"

namespace recal {

namespace {

constexpr double kMinDistance = 1e-12;
constexpr double kRankTolerance = 1e-12;
constexpr double kOutlierFence = 3.0;

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Single-linkage dendrogram node; children index points (< n) or nodes (>= n).
struct LinkageNode {
  std::size_t left = 0;
  std::size_t right = 0;
  double distance = 0.0;
  std::size_t size = 0;
};

std::vector<LinkageNode> single_linkage(std::size_t n, std::vector<MstEdge> edges) {
  std::stable_sort(edges.begin(), edges.end(),
                   [](const MstEdge& x, const MstEdge& y) { return x.weight < y.weight; });
  std::vector<std::size_t> parent(2 * n - 1);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  std::vector<LinkageNode> nodes;
  nodes.reserve(n - 1);
  auto size_of = [&](std::size_t id) { return id < n ? std::size_t{1} : nodes[id - n].size; };
  for (const auto& e : edges) {
    const std::size_t ra = find(e.a);
    const std::size_t rb = find(e.b);
    const std::size_t id = n + nodes.size();
    nodes.push_back({ra, rb, e.weight, size_of(ra) + size_of(rb)});
    parent[ra] = id;
    parent[rb] = id;
  }
  return nodes;
}

// One row of the condensed tree: `child` is a point index when !is_cluster.
struct CondensedRow {
  std::size_t parent = 0;
  std::size_t child = 0;
  bool is_cluster = false;
  double lambda = 0.0;
  std::size_t child_size = 1;
};

struct CondensedTree {
  std::vector<CondensedRow> rows;
  std::size_t cluster_count = 1;  // cluster 0 is the root
};

CondensedTree condense(std::size_t n, const std::vector<LinkageNode>& nodes,
                       std::size_t min_cluster_size) {
  CondensedTree tree;
  const std::size_t root = 2 * n - 2;
  std::vector<std::size_t> relabel(2 * n - 1, 0);
  std::vector<bool> ignore(2 * n - 1, false);
  auto size_of = [&](std::size_t id) { return id < n ? std::size_t{1} : nodes[id - n].size; };

  // Drops every point under `id` out of `cluster` at `lambda`.
  auto fall_out = [&](std::size_t id, std::size_t cluster, double lambda) {
    std::vector<std::size_t> stack{id};
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      if (cur < n) {
        tree.rows.push_back({cluster, cur, false, lambda, 1});
      } else {
        ignore[cur] = true;
        stack.push_back(nodes[cur - n].right);
        stack.push_back(nodes[cur - n].left);
      }
    }
  };

  std::vector<std::size_t> order{root};
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t id = order[i];
    if (id >= n) {
      order.push_back(nodes[id - n].left);
      order.push_back(nodes[id - n].right);
    }
  }

  for (std::size_t id : order) {
    if (id < n || ignore[id]) continue;
    const auto& node = nodes[id - n];
    const double lambda = 1.0 / std::max(node.distance, kMinDistance);
    const std::size_t cluster = relabel[id];
    const bool left_big = size_of(node.left) >= min_cluster_size;
    const bool right_big = size_of(node.right) >= min_cluster_size;
    if (left_big && right_big) {
      for (std::size_t child : {node.left, node.right}) {
        relabel[child] = tree.cluster_count++;
        tree.rows.push_back({cluster, relabel[child], true, lambda, size_of(child)});
      }
    } else if (!left_big && !right_big) {
      fall_out(node.left, cluster, lambda);
      fall_out(node.right, cluster, lambda);
    } else if (left_big) {
      relabel[node.left] = cluster;
      fall_out(node.right, cluster, lambda);
    } else {
      relabel[node.right] = cluster;
      fall_out(node.left, cluster, lambda);
    }
  }
  return tree;
}

}  // namespace

Vector Projection::project(std::span<const double> embedding) const {
  if (embedding.size() != mean.size()) {
    throw DimensionMismatch("embedding has dimension " + std::to_string(embedding.size()) +
                            ", projection expects " + std::to_string(mean.size()));
  }
  Vector out(components.size(), 0.0);
  for (std::size_t k = 0; k < components.size(); ++k) {
    double dot = 0.0;
    for (std::size_t d = 0; d < mean.size(); ++d) dot += components[k][d] * (embedding[d] - mean[d]);
    out[k] = dot;
  }
  return out;
}

Projection fit_projection(std::span<const Vector> embeddings, std::size_t n) {
  const std::size_t m = embeddings.size();
  if (m < 2) throw DegenerateData("projection needs at least two embeddings");
  const std::size_t dim = embeddings.front().size();
  if (dim == 0) throw DegenerateData("embeddings are empty");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < m; ++i) {
    if (embeddings[i].size() != dim) throw DimensionMismatch("embeddings differ in dimension");
    for (std::size_t d = 0; d < dim; ++d) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = embeddings[i][d];
    }
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const double denom = static_cast<double>(m - 1);

  // Work in whichever of the covariance (dim x dim) or Gram (m x m) matrices is smaller.
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd directions;  // columns are unit principal directions in input space
  if (dim <= m) {
    const Eigen::MatrixXd cov = (x.transpose() * x) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    eigenvalues = solver.eigenvalues();
    directions = solver.eigenvectors();
  } else {
    const Eigen::MatrixXd gram = (x * x.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    eigenvalues = solver.eigenvalues();
    directions = x.transpose() * solver.eigenvectors();
    for (Eigen::Index c = 0; c < directions.cols(); ++c) {
      const double norm = directions.col(c).norm();
      if (norm > 0.0) directions.col(c) /= norm;
    }
  }

  const Eigen::Index count = eigenvalues.size();
  const double largest = eigenvalues(count - 1);
  if (!(largest > 0.0)) throw DegenerateData("all embeddings are identical");
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < count; ++i) {
    if (eigenvalues(i) > kRankTolerance * largest) ++rank;
  }
  const std::size_t keep = std::min({n, dim, m - 1, rank});

  Projection p;
  p.mean.assign(mu.data(), mu.data() + dim);
  for (std::size_t k = 0; k < keep; ++k) {
    const Eigen::Index col = count - 1 - static_cast<Eigen::Index>(k);
    Vector comp(dim);
    std::size_t argmax = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      comp[d] = directions(static_cast<Eigen::Index>(d), col);
      if (std::abs(comp[d]) > std::abs(comp[argmax])) argmax = d;
    }
    if (comp[argmax] < 0.0) {
      for (double& v : comp) v = -v;
    }
    p.components.push_back(std::move(comp));
    p.explained_variance.push_back(eigenvalues(col));
  }
  return p;
}

FeatureVector FeatureSpace::feature(std::span<const double> embedding, double score) const {
  FeatureVector f = projection.project(embedding);
  f.push_back(score);
  if (f.size() != standardization.mean.size()) {
    throw DimensionMismatch("feature dimension does not match standardization statistics");
  }
  for (std::size_t d = 0; d < f.size(); ++d) {
    const double scale = standardization.scale[d];
    f[d] = scale > 0.0 ? (f[d] - standardization.mean[d]) / scale : 0.0;
  }
  return f;
}

FeatureSpace fit_feature_space(Projection projection, std::span<const Vector> embeddings,
                               std::span<const double> scores) {
  if (embeddings.size() != scores.size()) throw LengthMismatch("embeddings and scores differ in length");
  if (embeddings.empty()) throw EmptyInput("no training points");
  FeatureSpace space;
  space.projection = std::move(projection);
  const std::size_t dim = space.projection.output_dim() + 1;
  std::vector<Vector> raw;
  raw.reserve(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    raw.push_back(space.projection.project(embeddings[i]));
    raw.back().push_back(scores[i]);
  }
  const double m = static_cast<double>(raw.size());
  space.standardization.mean.assign(dim, 0.0);
  space.standardization.scale.assign(dim, 0.0);
  for (const auto& r : raw) {
    for (std::size_t d = 0; d < dim; ++d) space.standardization.mean[d] += r[d];
  }
  for (double& v : space.standardization.mean) v /= m;
  for (const auto& r : raw) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double dev = r[d] - space.standardization.mean[d];
      space.standardization.scale[d] += dev * dev;
    }
  }
  for (std::size_t d = 0; d < dim; ++d) {
    const double sd = std::sqrt(space.standardization.scale[d] / m);
    const double magnitude = std::max(1.0, std::abs(space.standardization.mean[d]));
    space.standardization.scale[d] = sd > 1e-12 * magnitude ? sd : 0.0;
  }
  return space;
}

std::vector<FeatureVector> build_features(const FeatureSpace& space,
                                          std::span<const Vector> embeddings,
                                          std::span<const double> scores) {
  if (embeddings.size() != scores.size()) throw LengthMismatch("embeddings and scores differ in length");
  std::vector<FeatureVector> out;
  out.reserve(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) out.push_back(space.feature(embeddings[i], scores[i]));
  return out;
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    sum += diff * diff;
  }
  return std::sqrt(sum);
}

std::vector<double> core_distances(std::span<const FeatureVector> points, std::size_t min_samples,
                                   unsigned workers) {
  const std::size_t n = points.size();
  std::vector<double> core(n, 0.0);
  if (n < 2) return core;
  const std::size_t k = std::clamp<std::size_t>(min_samples, 1, n - 1);
  parallel_for(n, workers, [&](std::size_t i) {
    std::vector<double> dist;
    dist.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) dist.push_back(euclidean(points[i], points[j]));
    }
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
    core[i] = dist[k - 1];
  });
  return core;
}

std::vector<MstEdge> mutual_reachability_mst(std::span<const FeatureVector> points,
                                             std::span<const double> core, unsigned workers) {
  const std::size_t n = points.size();
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  edges.reserve(n - 1);
  std::vector<bool> in_tree(n, false);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  std::size_t current = 0;
  in_tree[0] = true;
  // Threads only pay off for the relaxation step on large inputs.
  const unsigned relax_workers = n >= 2048 ? workers : 1;
  for (std::size_t step = 1; step < n; ++step) {
    const std::size_t src = current;
    const std::size_t chunks = relax_workers > 1 ? relax_workers : 1;
    parallel_for(chunks, relax_workers, [&](std::size_t c) {
      for (std::size_t j = c; j < n; j += chunks) {
        if (in_tree[j]) continue;
        const double d = std::max({core[src], core[j], euclidean(points[src], points[j])});
        if (d < best[j]) {
          best[j] = d;
          from[j] = src;
        }
      }
    });
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (!in_tree[j] && (next == n || best[j] < best[next])) next = j;
    }
    in_tree[next] = true;
    edges.push_back({from[next], next, best[next]});
    current = next;
  }
  return edges;
}

ClusterModel hdbscan(std::span<const FeatureVector> features, std::size_t min_cluster_size,
                     std::size_t min_samples, unsigned workers) {
  if (min_cluster_size < 2) throw Error("min_cluster_size must be at least 2");
  if (min_samples < 1) throw Error("min_samples must be at least 1");
  const std::size_t n = features.size();
  if (n < min_cluster_size || n < 2) {
    throw TooFewPoints("hdbscan needs at least " + std::to_string(min_cluster_size) + " points, got " +
                       std::to_string(n));
  }
  for (const auto& f : features) {
    if (f.size() != features.front().size()) throw DimensionMismatch("features differ in dimension");
  }

  ClusterModel model;
  model.min_cluster_size = min_cluster_size;
  model.min_samples = min_samples;
  model.training_features.assign(features.begin(), features.end());

  const auto core = core_distances(features, min_samples, workers);
  const auto linkage = single_linkage(n, mutual_reachability_mst(features, core, workers));
  const CondensedTree tree = condense(n, linkage, min_cluster_size);

  const std::size_t clusters = tree.cluster_count;
  std::vector<double> birth(clusters, 0.0);
  std::vector<std::size_t> parent(clusters, 0);
  std::vector<std::vector<std::size_t>> children(clusters);
  for (const auto& row : tree.rows) {
    if (!row.is_cluster) continue;
    birth[row.child] = row.lambda;
    parent[row.child] = row.parent;
    children[row.parent].push_back(row.child);
  }
  std::vector<double> stability(clusters, 0.0);
  for (const auto& row : tree.rows) {
    stability[row.parent] += (row.lambda - birth[row.parent]) * static_cast<double>(row.child_size);
  }

  // Excess of mass, bottom-up. Child ids are always larger than their parent's.
  std::vector<bool> selected(clusters, false);
  std::vector<double> subtree(stability);
  for (std::size_t c = clusters; c-- > 0;) {
    if (children[c].empty()) {
      selected[c] = true;
      continue;
    }
    double child_sum = 0.0;
    for (std::size_t ch : children[c]) child_sum += subtree[ch];
    if (child_sum > stability[c]) {
      subtree[c] = child_sum;
    } else {
      selected[c] = true;
      std::vector<std::size_t> stack(children[c]);
      while (!stack.empty()) {
        const std::size_t d = stack.back();
        stack.pop_back();
        selected[d] = false;
        stack.insert(stack.end(), children[d].begin(), children[d].end());
      }
    }
  }

  std::vector<int> dense(clusters, -1);
  int next_label = 0;
  for (std::size_t c = 0; c < clusters; ++c) {
    if (selected[c]) dense[c] = next_label++;
  }

  model.labels.assign(n, -1);
  for (const auto& row : tree.rows) {
    if (row.is_cluster) continue;
    std::size_t c = row.parent;
    while (!selected[c] && c != 0) c = parent[c];
    if (selected[c]) model.labels[row.child] = dense[c];
  }

  if (selected[0]) {
    // The root has no birth level to separate members from stragglers, so use
    // a far-out fence on log core distance instead.
    std::vector<double> logs(n);
    for (std::size_t i = 0; i < n; ++i) logs[i] = std::log(std::max(core[i], kMinDistance));
    std::vector<double> sorted(logs);
    std::sort(sorted.begin(), sorted.end());
    const double q1 = quantile_sorted(sorted, 0.25);
    const double q3 = quantile_sorted(sorted, 0.75);
    const double fence = q3 + kOutlierFence * (q3 - q1);
    std::size_t members = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (logs[i] > fence) model.labels[i] = -1;
      if (model.labels[i] >= 0) ++members;
    }
    if (members < min_cluster_size) std::fill(model.labels.begin(), model.labels.end(), -1);
  }

  std::vector<std::size_t> counts(static_cast<std::size_t>(next_label), 0);
  for (int l : model.labels) {
    if (l >= 0) ++counts[static_cast<std::size_t>(l)];
  }
  // Re-densify in case the root collapsed to noise.
  std::vector<int> remap(counts.size(), -1);
  int k = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > 0) remap[c] = k++;
  }
  for (int& l : model.labels) {
    if (l >= 0) l = remap[static_cast<std::size_t>(l)];
  }
  model.cluster_count = static_cast<std::size_t>(k);
  return model;
}

int assign(const ClusterModel& model, std::span<const double> feature) {
  if (model.training_features.empty()) return -1;
  if (feature.size() != model.training_features.front().size()) {
    throw DimensionMismatch("feature dimension does not match the cluster model");
  }
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < model.training_features.size(); ++i) {
    const double d = euclidean(feature, model.training_features[i]);
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  return model.labels[best];
}

nlohmann::json to_json(const FeatureSpace& space) {
  return {{"projection",
           {{"method", "pca"},
            {"mean", space.projection.mean},
            {"components", space.projection.components},
            {"explained_variance", space.projection.explained_variance}}},
          {"standardization",
           {{"mean", space.standardization.mean}, {"scale", space.standardization.scale}}}};
}

FeatureSpace feature_space_from_json(const nlohmann::json& j) {
  try {
    FeatureSpace space;
    const auto& p = j.at("projection");
    if (p.value("method", std::string("pca")) != "pca") throw SchemaError("unsupported projection method");
    space.projection.mean = p.at("mean").get<Vector>();
    space.projection.components = p.at("components").get<std::vector<Vector>>();
    space.projection.explained_variance = p.value("explained_variance", Vector{});
    space.standardization.mean = j.at("standardization").at("mean").get<Vector>();
    space.standardization.scale = j.at("standardization").at("scale").get<Vector>();
    if (space.standardization.mean.size() != space.projection.output_dim() + 1 ||
        space.standardization.scale.size() != space.standardization.mean.size()) {
      throw SchemaError("standardization statistics do not match projection dimension");
    }
    return space;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed feature space: ") + e.what());
  }
}

}  // namespace recal
