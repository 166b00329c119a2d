// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ssdlab/analysis.hpp"
#include "ssdlab/clustering.hpp"

namespace ssdlab {
namespace {

// `groups` tight blobs of `per_group` points around well-separated centers.
Matrix blobs(std::size_t groups, std::size_t per_group, std::size_t dim, Rng& rng,
             std::vector<std::size_t>* labels = nullptr) {
  Matrix centers = oracle::random_matrix(groups, dim, rng, 10.0);
  Matrix p(groups * per_group, dim);
  std::vector<std::size_t> order(groups * per_group);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t g = i % groups;
    if (labels != nullptr) {
      labels->resize(order.size());
      (*labels)[order[i]] = g;
    }
    for (std::size_t j = 0; j < dim; ++j) p(order[i], j) = centers(g, j) + 0.1 * rng.normal();
  }
  return p;
}

TEST(Partition, Helpers) {
  Rng rng(1);
  const Partition p = Partition::random_balanced(12, 3, rng);
  EXPECT_TRUE(p.is_balanced());
  EXPECT_EQ(p.group_size(), 4u);
  for (const auto& m : p.members()) {
    EXPECT_EQ(m.size(), 4u);
    EXPECT_TRUE(std::is_sorted(m.begin(), m.end()));
  }
  EXPECT_EQ(Partition::contiguous(6, 3).assignment, (std::vector<std::size_t>{0, 0, 1, 1, 2, 2}));
  EXPECT_THROW((Partition{{0, 0, 0, 1}, 2}).require_balanced(), std::invalid_argument);
  EXPECT_THROW((Partition{{0, 2}, 2}).require_balanced(), std::invalid_argument);
}

TEST(Wcss, HandCases) {
  EXPECT_DOUBLE_EQ(wcss(Matrix{{0}, {2}}, Partition{{0, 0}, 1}), 2.0);
  EXPECT_DOUBLE_EQ(wcss(Matrix(4, 3, 1.5), Partition{{0, 1, 0, 1}, 2}), 0.0);
  EXPECT_THROW(wcss(Matrix(3, 1), Partition{{0, 0}, 1}), std::invalid_argument);
  EXPECT_THROW(wcss(Matrix(2, 1), Partition{{0, 0}, 2}), std::invalid_argument);
}

TEST(Wcss, MatchesDirectSummation) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix pts = oracle::random_matrix(6, 2, rng);
    const auto labels = oracle::random_balanced_labels(6, 3, rng);
    EXPECT_NEAR(wcss(pts, Partition{labels, 3}), oracle::direct_wcss(pts, labels, 3), 1e-12);
  }
}

TEST(BalancedKMeans, SingleCluster) {
  Rng rng(3);
  const Matrix pts = oracle::random_matrix(7, 3, rng);
  const auto out = balanced_kmeans(pts, 1, std::nullopt, rng);
  EXPECT_EQ(out.partition.assignment, std::vector<std::size_t>(7, 0));
  EXPECT_NEAR(out.wcss, oracle::direct_wcss(pts, out.partition.assignment, 1), 1e-12);
}

TEST(BalancedKMeans, SeparatedPairsFindExhaustiveOptimum) {
  const Matrix pts{{0.0, 0.0}, {10.0, 10.0}, {0.1, 0.0}, {10.0, 10.1}};
  Rng rng(4);
  const auto out = balanced_kmeans(pts, 2, std::nullopt, rng);
  EXPECT_EQ(out.partition.assignment[0], out.partition.assignment[2]);
  EXPECT_EQ(out.partition.assignment[1], out.partition.assignment[3]);
  EXPECT_NE(out.partition.assignment[0], out.partition.assignment[1]);
  EXPECT_EQ(oracle::balanced_partitions(4, 2).size(), 3u);
  EXPECT_NEAR(out.wcss, oracle::exhaustive_min_wcss(pts, 2), 1e-12);
}

TEST(BalancedKMeans, IdenticalPointsGiveZeroWcss) {
  Rng rng(5);
  const auto out = balanced_kmeans(Matrix(8, 2, 3.0), 4, std::nullopt, rng);
  EXPECT_TRUE(out.partition.is_balanced());
  EXPECT_EQ(out.wcss, 0.0);
}

TEST(BalancedKMeans, RejectsBadClusterCounts) {
  Rng rng(6);
  EXPECT_THROW(balanced_kmeans(Matrix(4, 2), 5, std::nullopt, rng), std::invalid_argument);
  EXPECT_THROW(balanced_kmeans(Matrix(5, 2), 2, std::nullopt, rng), std::invalid_argument);
  EXPECT_THROW(balanced_kmeans(Matrix(4, 2), 0, std::nullopt, rng), std::invalid_argument);
}

TEST(BalancedKMeans, OutcomeInvariants) {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t k = 1 + rng.index(6);
    const std::size_t n = k * (1 + rng.index(8));
    const Matrix pts = oracle::random_matrix(n, 3, rng);
    const auto out = balanced_kmeans(pts, k, std::nullopt, rng);
    ASSERT_TRUE(out.partition.is_balanced());
    EXPECT_NEAR(out.wcss, oracle::direct_wcss(pts, out.partition.assignment, k), 1e-9);
    EXPECT_EQ(out.centroids, cluster_means(pts, out.partition.assignment, k));
    for (std::size_t i = 1; i < out.lloyd_wcss.size(); ++i) {
      EXPECT_LE(out.lloyd_wcss[i], out.lloyd_wcss[i - 1] * (1 + 1e-12) + 1e-12);
    }
  }
}

TEST(BalancedKMeans, WithinTenPercentOfExhaustiveOptimumOnSmallInstances) {
  Rng rng(8);
  const std::pair<std::size_t, std::size_t> shapes[] = {{4, 2}, {6, 2}, {6, 3}, {8, 2}, {8, 4}};
  for (const auto& [n, k] : shapes) {
    for (int trial = 0; trial < 40; ++trial) {
      const Matrix pts = oracle::random_matrix(n, 2, rng);
      const double best = oracle::exhaustive_min_wcss(pts, k);
      const auto out = cluster_with_warmstart(pts, k, std::nullopt, rng);
      EXPECT_LE(out.wcss, 1.1 * best + 1e-12) << "n=" << n << " k=" << k << " trial " << trial;
    }
  }
}

TEST(WarmStart, WithoutPrevEqualsRandomRun) {
  Rng data(9);
  const Matrix pts = oracle::random_matrix(12, 3, data);
  Rng a(100), b(100);
  const auto single = balanced_kmeans(pts, 3, std::nullopt, a);
  const auto chosen = cluster_with_warmstart(pts, 3, std::nullopt, b);
  EXPECT_EQ(single.partition, chosen.partition);
  EXPECT_EQ(single.wcss, chosen.wcss);
  EXPECT_EQ(chosen.init_kind, InitKind::kRandom);
  EXPECT_TRUE(a == b);
}

TEST(WarmStart, SelectsMinimumOfBothRuns) {
  Rng data(10);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix pts = oracle::random_matrix(24, 4, data);
    const Partition prev = Partition::random_balanced(24, 4, data);
    Rng rng(1000 + trial);
    Rng replay = rng;
    const auto random_run = balanced_kmeans(pts, 4, std::nullopt, replay);
    const auto warm_run = balanced_kmeans(pts, 4, prev, replay);
    const auto chosen = cluster_with_warmstart(pts, 4, prev, rng);
    EXPECT_EQ(chosen.wcss, std::min(random_run.wcss, warm_run.wcss));
    EXPECT_LE(chosen.wcss, random_run.wcss);
    EXPECT_EQ(chosen.init_kind, random_run.wcss < warm_run.wcss ? InitKind::kRandom : InitKind::kWarmStart);
    EXPECT_TRUE(chosen.partition.is_balanced());
  }
}

TEST(WarmStart, FrozenWeightsReproducePreviousOptimum) {
  Rng data(11);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> labels;
    const Matrix pts = blobs(8, 6, 5, data, &labels);
    const Partition planted{labels, 8};  // optimal for well-separated blobs
    Rng rng(trial);
    const auto again = cluster_with_warmstart(pts, 8, planted, rng);
    EXPECT_EQ(adjusted_rand_index(planted, again.partition), 1.0);
    EXPECT_EQ(again.init_kind, InitKind::kWarmStart);
  }
}

TEST(WarmStart, RerunOnFrozenWeightsIsIdempotent) {
  Rng data(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix pts = oracle::random_matrix(64, 6, data);
    Rng a(trial), b(trial);
    const auto first = cluster_with_warmstart(pts, 8, std::nullopt, a);
    const auto second = cluster_with_warmstart(pts, 8, first.partition, b);
    EXPECT_EQ(second.partition, first.partition);
    EXPECT_EQ(second.init_kind, InitKind::kWarmStart);
  }
}

TEST(WarmStart, ShapeMismatchRejected) {
  Rng rng(12);
  EXPECT_THROW(cluster_with_warmstart(Matrix(6, 2), 2, Partition::contiguous(4, 2), rng), std::invalid_argument);
}

}  // namespace
}  // namespace ssdlab
