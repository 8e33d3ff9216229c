#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "oracles/jacobi.hpp"
#include "oracles/kruskal.hpp"
#include "recal/cluster.hpp"
#include "recal/error.hpp"
#include "recal/synth.hpp"

using namespace recal;

namespace {

std::vector<Vector> blob(Rng& rng, std::size_t count, const Vector& center, double sigma) {
  std::vector<Vector> out;
  for (std::size_t i = 0; i < count; ++i) {
    Vector p(center);
    for (auto& v : p) v += sigma * rng.normal();
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Vector> two_blobs(std::uint64_t seed) {
  Rng rng(seed);
  auto pts = blob(rng, 60, {0, 0}, 0.5);
  auto b = blob(rng, 60, {10, 0}, 0.5);
  pts.insert(pts.end(), b.begin(), b.end());
  return pts;
}

}  // namespace

TEST(Projection, LineHasOneComponent) {
  std::vector<Vector> pts;
  for (double t : {-2.0, -0.5, 0.0, 1.0, 1.5}) pts.push_back({1 + t, 2 + 2 * t, -t});
  const auto proj = fit_projection(pts, 20);
  ASSERT_EQ(proj.output_dim(), 1u);
  const double scale = std::sqrt(6.0);
  // Mean of t is 0, so projected coordinate is the signed distance along the line.
  for (double t : {-2.0, 1.0}) {
    const auto y = proj.project(Vector{1 + t, 2 + 2 * t, -t});
    EXPECT_NEAR(std::abs(y[0]), std::abs(t) * scale, 1e-12);
  }
  const auto a = proj.project(Vector{0, 0, 1});
  const auto b = proj.project(Vector{2, 4, -1});
  EXPECT_LT(a[0], b[0]);  // largest coordinate (y) of the component is positive
}

TEST(Projection, DimensionClamp) {
  Rng rng(1);
  std::vector<Vector> pts;
  for (int i = 0; i < 40; ++i) {
    Vector v(8);
    for (auto& x : v) x = rng.normal();
    pts.push_back(v);
  }
  EXPECT_EQ(fit_projection(pts, 20).output_dim(), 8u);
  EXPECT_EQ(fit_projection(std::span<const Vector>(pts.data(), 4), 20).output_dim(), 3u);
}

TEST(Projection, IdenticalEmbeddingsAreDegenerate) {
  const std::vector<Vector> pts(5, Vector{1, 2, 3});
  EXPECT_THROW(fit_projection(pts, 2), DegenerateData);
}

TEST(Projection, OrthonormalAndReconstructionMatchesEigenOracle) {
  Rng rng(2);
  const std::size_t m = 50, d = 10, keep = 4;
  std::vector<Vector> pts(m, Vector(d));
  for (auto& p : pts)
    for (std::size_t j = 0; j < d; ++j) p[j] = rng.normal() * (1.0 + static_cast<double>(j));
  const auto proj = fit_projection(pts, keep);
  ASSERT_EQ(proj.output_dim(), keep);
  for (std::size_t a = 0; a < keep; ++a)
    for (std::size_t b = 0; b < keep; ++b) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += proj.components[a][j] * proj.components[b][j];
      EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-8);
    }

  Vector mean(d, 0.0);
  for (const auto& p : pts)
    for (std::size_t j = 0; j < d; ++j) mean[j] += p[j] / static_cast<double>(m);
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (const auto& p : pts)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / static_cast<double>(m);
  auto eig = oracle::jacobi_eigen(cov).values;
  std::sort(eig.begin(), eig.end(), std::greater<>());
  const double discarded = std::accumulate(eig.begin() + keep, eig.end(), 0.0);

  double err = 0.0;
  for (const auto& p : pts) {
    const auto y = proj.project(p);
    for (std::size_t j = 0; j < d; ++j) {
      double r = proj.mean[j];
      for (std::size_t k = 0; k < keep; ++k) r += y[k] * proj.components[k][j];
      err += (p[j] - r) * (p[j] - r);
    }
  }
  EXPECT_NEAR(err / static_cast<double>(m), discarded, 1e-8 * std::max(1.0, discarded));
  // Explained variance uses the unbiased (m - 1) normalisation.
  const double unbiased = static_cast<double>(m) / static_cast<double>(m - 1);
  for (std::size_t k = 0; k < keep; ++k)
    EXPECT_NEAR(proj.explained_variance[k], eig[k] * unbiased, 1e-8 * eig[0]);
}

TEST(Projection, WideDataUsesGramPath) {
  Rng rng(3);
  std::vector<Vector> pts(6, Vector(40));
  for (auto& p : pts)
    for (auto& v : p) v = rng.normal();
  const auto proj = fit_projection(pts, 20);
  EXPECT_EQ(proj.output_dim(), 5u);
  for (std::size_t a = 0; a < 5; ++a) {
    double norm = 0.0;
    for (double v : proj.components[a]) norm += v * v;
    EXPECT_NEAR(norm, 1.0, 1e-8);
  }
}

TEST(Features, TrainingFeaturesAreStandardized) {
  Rng rng(4);
  std::vector<Vector> emb(30, Vector(5));
  std::vector<double> scores(30);
  for (std::size_t i = 0; i < 30; ++i) {
    for (auto& v : emb[i]) v = rng.normal();
    scores[i] = rng.uniform();
  }
  const auto space = fit_feature_space(fit_projection(emb, 3), emb, scores);
  const auto feats = build_features(space, emb, scores);
  ASSERT_EQ(space.dim(), 4u);
  for (std::size_t j = 0; j < 4; ++j) {
    double mean = 0.0, sq = 0.0;
    for (const auto& f : feats) mean += f[j] / 30.0;
    for (const auto& f : feats) sq += (f[j] - mean) * (f[j] - mean) / 30.0;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-9);
  }
  Vector mean_emb(5, 0.0);
  for (const auto& e : emb)
    for (std::size_t j = 0; j < 5; ++j) mean_emb[j] += e[j] / 30.0;
  const double mean_score = std::accumulate(scores.begin(), scores.end(), 0.0) / 30.0;
  for (double v : space.feature(mean_emb, mean_score)) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_THROW(space.feature(Vector(4, 0.0), 0.5), DimensionMismatch);
}

TEST(Features, IdentityProjectionHandCheck) {
  const std::vector<Vector> emb{{1, 0}, {0, 1}, {-1, -1}};
  const std::vector<double> scores{0.2, 0.5, 0.8};
  Projection identity;
  identity.mean = {0, 0};
  identity.components = {{1, 0}, {0, 1}};
  identity.explained_variance = {1, 1};
  const auto space = fit_feature_space(identity, emb, scores);
  const auto f = build_features(space, emb, scores);
  const double sd_x = std::sqrt(2.0 / 3.0);
  const double sd_s = std::sqrt(0.06);
  EXPECT_NEAR(f[0][0], 1.0 / sd_x, 1e-12);
  EXPECT_NEAR(f[2][1], -1.0 / sd_x, 1e-12);
  EXPECT_NEAR(f[0][2], -0.3 / sd_s, 1e-12);
  EXPECT_NEAR(f[1][2], 0.0, 1e-12);
}

TEST(Features, ConstantDimensionMapsToZero) {
  const std::vector<Vector> emb{{1, 0}, {0, 1}, {-1, -1}};
  const std::vector<double> scores{0.5, 0.5, 0.5};
  const auto space = fit_feature_space(fit_projection(emb, 2), emb, scores);
  for (const auto& f : build_features(space, emb, scores)) EXPECT_EQ(f.back(), 0.0);
  EXPECT_EQ(space.feature(emb[0], 0.9).back(), 0.0);
}

TEST(Features, JsonRoundTrip) {
  Rng rng(5);
  std::vector<Vector> emb(12, Vector(4));
  std::vector<double> scores(12);
  for (std::size_t i = 0; i < 12; ++i) {
    for (auto& v : emb[i]) v = rng.normal();
    scores[i] = rng.uniform();
  }
  const auto space = fit_feature_space(fit_projection(emb, 3), emb, scores);
  const auto back = feature_space_from_json(to_json(space));
  EXPECT_EQ(to_json(space).at("projection").at("method"), "pca");
  EXPECT_EQ(back.feature(emb[3], scores[3]), space.feature(emb[3], scores[3]));
}

TEST(Hdbscan, TwoBlobs) {
  const auto pts = two_blobs(1);
  const auto model = hdbscan(pts, 50, 5);
  EXPECT_EQ(model.cluster_count, 2u);
  EXPECT_EQ(std::count(model.labels.begin(), model.labels.end(), -1), 0);
  EXPECT_NE(model.labels[0], model.labels[60]);
  for (std::size_t i = 0; i < 60; ++i) EXPECT_EQ(model.labels[i], model.labels[0]);
  for (std::size_t i = 60; i < 120; ++i) EXPECT_EQ(model.labels[i], model.labels[60]);
}

TEST(Hdbscan, TooFewPoints) {
  Rng rng(2);
  EXPECT_THROW(hdbscan(blob(rng, 30, {0, 0}, 1.0), 50, 5), TooFewPoints);
}

TEST(Hdbscan, BlobWithFarOutliers) {
  Rng rng(3);
  auto pts = blob(rng, 120, {0, 0}, 0.5);
  for (int i = 0; i < 5; ++i) {
    const double angle = 2.0 * 3.14159265358979 * i / 5.0;
    pts.push_back({50.0 * std::cos(angle), 50.0 * std::sin(angle)});
  }
  const auto model = hdbscan(pts, 50, 5);
  EXPECT_EQ(model.cluster_count, 1u);
  for (std::size_t i = 0; i < 120; ++i) EXPECT_EQ(model.labels[i], 0);
  for (std::size_t i = 120; i < 125; ++i) EXPECT_EQ(model.labels[i], -1);
}

TEST(Hdbscan, ClustersHaveMinimumSizeAndDenseLabels) {
  Rng rng(4);
  std::vector<Vector> pts;
  for (int c = 0; c < 4; ++c) {
    auto b = blob(rng, 40 + 20 * c, {15.0 * c, 3.0 * c}, 0.3 + 0.3 * c);
    pts.insert(pts.end(), b.begin(), b.end());
  }
  for (std::size_t mcs : {10u, 30u, 50u}) {
    const auto model = hdbscan(pts, mcs, 5);
    std::set<int> seen;
    for (std::size_t k = 0; k < model.cluster_count; ++k) {
      const auto members = std::count(model.labels.begin(), model.labels.end(), static_cast<int>(k));
      EXPECT_GE(static_cast<std::size_t>(members), mcs);
    }
    for (int l : model.labels) {
      EXPECT_GE(l, -1);
      EXPECT_LT(l, static_cast<int>(model.cluster_count));
      if (l >= 0) seen.insert(l);
    }
    EXPECT_EQ(seen.size(), model.cluster_count);
  }
}

TEST(Hdbscan, MstMatchesKruskal) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 5 + rng.below(196);
    std::vector<Vector> pts(n, Vector(3));
    for (auto& p : pts)
      for (auto& v : p) v = rng.normal() * (1 + trial % 3);
    const std::size_t ms = 1 + rng.below(8);
    const auto core = core_distances(pts, ms);
    const auto expected_core = oracle::core_distances(pts, ms);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(core[i], expected_core[i]);
    double total = 0.0;
    const auto mst = mutual_reachability_mst(pts, core);
    EXPECT_EQ(mst.size(), n - 1);
    for (const auto& e : mst) total += e.weight;
    const double expected = oracle::kruskal_mst_weight(pts, expected_core);
    EXPECT_NEAR(total, expected, 1e-9 * expected);
  }
}

TEST(Hdbscan, InvariantUnderRotationAndScaling) {
  const auto pts = two_blobs(7);
  const auto base = hdbscan(pts, 50, 5);
  std::vector<Vector> moved;
  const double c = std::cos(0.7), s = std::sin(0.7);
  for (const auto& p : pts) moved.push_back({3.0 * (c * p[0] - s * p[1]), 3.0 * (s * p[0] + c * p[1])});
  EXPECT_EQ(hdbscan(moved, 50, 5).labels, base.labels);
}

TEST(Hdbscan, DeterministicAndWorkerIndependent) {
  Rng rng(8);
  std::vector<Vector> pts;
  for (int c = 0; c < 3; ++c) {
    auto b = blob(rng, 300, {8.0 * c, 0, 0}, 1.0);
    pts.insert(pts.end(), b.begin(), b.end());
  }
  const auto a = hdbscan(pts, 50, 5, 1);
  const auto b = hdbscan(pts, 50, 5, 8);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(hdbscan(pts, 50, 5, 1).labels, a.labels);
}

TEST(Assign, NearestNeighbour) {
  const auto pts = two_blobs(9);
  const auto model = hdbscan(pts, 50, 5);
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(assign(model, pts[i]), model.labels[i]);
  EXPECT_EQ(assign(model, Vector{0.1, 0.0}), model.labels[0]);
  EXPECT_EQ(assign(model, Vector{9.9, 0.0}), model.labels[60]);

  ClusterModel tie;
  tie.training_features = {{0, 0}, {2, 0}};
  tie.labels = {1, 0};
  tie.cluster_count = 2;
  EXPECT_EQ(assign(tie, Vector{1, 0}), 1);
}
