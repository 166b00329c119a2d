// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "ssdlab/matrix.hpp"
#include "ssdlab/rng.hpp"

namespace ssdlab {

/// Assignment of each neuron (row of W_i) to one of `n_clusters` experts.
struct Partition {
  std::vector<std::size_t> assignment;
  std::size_t n_clusters = 0;

  std::size_t size() const { return assignment.size(); }
  /// Rows per cluster when balanced.
  std::size_t group_size() const { return n_clusters == 0 ? 0 : assignment.size() / n_clusters; }
  bool is_balanced() const;
  /// Throws std::invalid_argument unless every cluster holds exactly size()/n_clusters members.
  void require_balanced() const;
  /// Member indices of every cluster, ascending.
  std::vector<std::vector<std::size_t>> members() const;

  static Partition random_balanced(std::size_t n_items, std::size_t n_clusters, Rng& rng);
  /// Item i goes to cluster i / (n_items / n_clusters).
  static Partition contiguous(std::size_t n_items, std::size_t n_clusters);

  friend bool operator==(const Partition&, const Partition&) = default;
};

enum class InitKind { kRandom, kWarmStart };

struct ClusteringOutcome {
  Partition partition;
  Matrix centroids;  // n_clusters × dim, means of the assigned rows
  double wcss = 0.0;
  InitKind init_kind = InitKind::kRandom;
  /// WCSS of the unconstrained Lloyd assignment after each iteration of the
  /// first pass, before balancing.
  std::vector<double> lloyd_wcss;
};

struct KMeansOptions {
  std::size_t max_lloyd_iterations = 100;
  std::size_t max_swap_passes = 100;
  std::size_t max_refinement_rounds = 100;
};

/// Within-cluster sum of squared deviations from the cluster means.
double wcss(const Matrix& points, const Partition& p);

/// Cluster means; empty clusters get a zero row.
Matrix cluster_means(const Matrix& points, const std::vector<std::size_t>& assignment, std::size_t n_clusters);

/// Lloyd k-means to a fixed point, then one capacity-constrained assignment
/// (greedy over sorted point/cluster distances, refined by improving swaps).
/// The pass is then repeated from the balanced result's means for as long as
/// WCSS strictly drops, so the result is reproduced when used as `init`.
/// With `init` (balanced) the first pass starts from the means of init's
/// clusters and init itself is kept unless a pass beats it; otherwise the
/// first pass starts from n_clusters distinct rows drawn from `rng`.
ClusteringOutcome balanced_kmeans(const Matrix& points, std::size_t n_clusters,
                                  const std::optional<Partition>& init, Rng& rng,
                                  const KMeansOptions& options = {});

/// Clusters twice (random init, and warm start from `prev`) and keeps the lower
/// WCSS; ties go to the warm start. Without `prev` this is the random run alone.
ClusteringOutcome cluster_with_warmstart(const Matrix& points, std::size_t n_clusters,
                                         const std::optional<Partition>& prev, Rng& rng,
                                         const KMeansOptions& options = {});

}  // namespace ssdlab
