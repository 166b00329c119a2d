// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssdlab/clustering.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>

namespace ssdlab {

bool Partition::is_balanced() const {
  if (n_clusters == 0 || assignment.size() % n_clusters != 0) return false;
  std::vector<std::size_t> counts(n_clusters, 0);
  for (std::size_t a : assignment) {
    if (a >= n_clusters) return false;
    ++counts[a];
  }
  const std::size_t want = group_size();
  return std::all_of(counts.begin(), counts.end(), [want](std::size_t c) { return c == want; });
}

void Partition::require_balanced() const {
  if (!is_balanced()) {
    throw std::invalid_argument("partition of " + std::to_string(assignment.size()) + " items into " +
                                std::to_string(n_clusters) + " clusters is not balanced");
  }
}

std::vector<std::vector<std::size_t>> Partition::members() const {
  std::vector<std::vector<std::size_t>> out(n_clusters);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] >= n_clusters) throw std::invalid_argument("partition label out of range");
    out[assignment[i]].push_back(i);
  }
  return out;
}

Partition Partition::random_balanced(std::size_t n_items, std::size_t n_clusters, Rng& rng) {
  Partition p = contiguous(n_items, n_clusters);
  rng.shuffle(p.assignment);
  return p;
}

Partition Partition::contiguous(std::size_t n_items, std::size_t n_clusters) {
  if (n_clusters == 0 || n_items % n_clusters != 0) {
    throw std::invalid_argument(std::to_string(n_items) + " items do not split into " +
                                std::to_string(n_clusters) + " equal clusters");
  }
  Partition p{std::vector<std::size_t>(n_items), n_clusters};
  const std::size_t g = n_items / n_clusters;
  for (std::size_t i = 0; i < n_items; ++i) p.assignment[i] = i / g;
  return p;
}

Matrix cluster_means(const Matrix& points, const std::vector<std::size_t>& assignment, std::size_t n_clusters) {
  Matrix means(n_clusters, points.cols());
  std::vector<std::size_t> counts(n_clusters, 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    auto dst = means.row(assignment[i]);
    auto src = points.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    ++counts[assignment[i]];
  }
  for (std::size_t c = 0; c < n_clusters; ++c) {
    if (counts[c] == 0) continue;
    const double inv = static_cast<double>(counts[c]);
    for (double& v : means.row(c)) v /= inv;
  }
  return means;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

double assignment_wcss(const Matrix& points, const std::vector<std::size_t>& assignment, std::size_t n_clusters) {
  const Matrix means = cluster_means(points, assignment, n_clusters);
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) total += squared_distance(points.row(i), means.row(assignment[i]));
  return total;
}

std::vector<std::size_t> nearest_centroids(const Matrix& points, const Matrix& centroids) {
  std::vector<std::size_t> out(points.rows(), 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
      const double d = squared_distance(points.row(i), centroids.row(c));
      if (d < best) {
        best = d;
        out[i] = c;
      }
    }
  }
  return out;
}

// Greedy capacity-constrained assignment: candidates sorted by
// (distance, point index, cluster index), each point takes the first cluster with room.
std::vector<std::size_t> greedy_balanced_assignment(const Matrix& points, const Matrix& centroids) {
  const std::size_t n = points.rows(), k = centroids.rows();
  const std::size_t capacity = n / k;
  std::vector<std::tuple<double, std::size_t, std::size_t>> candidates;
  candidates.reserve(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) candidates.emplace_back(squared_distance(points.row(i), centroids.row(c)), i, c);
  }
  std::sort(candidates.begin(), candidates.end());
  constexpr std::size_t kUnassigned = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> assignment(n, kUnassigned);
  std::vector<std::size_t> load(k, 0);
  std::size_t placed = 0;
  for (const auto& [d, i, c] : candidates) {
    if (assignment[i] != kUnassigned || load[c] == capacity) continue;
    assignment[i] = c;
    ++load[c];
    if (++placed == n) break;
  }
  return assignment;
}

// Pairwise swaps between clusters, applied whenever one lowers WCSS. With equal
// cluster sizes m, swapping a (cluster A) and b (cluster B) changes WCSS by
// -2[(S_A - S_B)·(x_b - x_a) + |x_b - x_a|²] / m, where S are cluster sums.
void refine_by_swaps(const Matrix& points, std::vector<std::size_t>& assignment, std::size_t n_clusters,
                     std::size_t max_passes) {
  const std::size_t n = points.rows(), dim = points.cols();
  if (n_clusters < 2) return;
  const double m = static_cast<double>(n / n_clusters);
  Matrix sums(n_clusters, dim);
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = sums.row(assignment[i]);
    auto x = points.row(i);
    for (std::size_t j = 0; j < dim; ++j) {
      s[j] += x[j];
      scale += x[j] * x[j];
    }
  }
  const double tol = 1e-12 * std::max(1.0, scale);
  std::vector<double> delta(dim);
  for (std::size_t pass = 0; pass < max_passes; ++pass) {
    bool improved = false;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        const std::size_t ca = assignment[a], cb = assignment[b];
        if (ca == cb) continue;
        auto xa = points.row(a);
        auto xb = points.row(b);
        auto sa = sums.row(ca);
        auto sb = sums.row(cb);
        double cross = 0.0, norm = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          delta[j] = xb[j] - xa[j];
          cross += (sa[j] - sb[j]) * delta[j];
          norm += delta[j] * delta[j];
        }
        const double change = -2.0 * (cross + norm) / m;
        if (change < -tol) {
          for (std::size_t j = 0; j < dim; ++j) {
            sa[j] += delta[j];
            sb[j] -= delta[j];
          }
          std::swap(assignment[a], assignment[b]);
          improved = true;
        }
      }
    }
    if (!improved) break;
  }
}

}  // namespace

double wcss(const Matrix& points, const Partition& p) {
  if (p.size() != points.rows()) {
    throw ShapeError("wcss: partition covers " + std::to_string(p.size()) + " of " +
                     std::to_string(points.rows()) + " rows");
  }
  std::vector<std::size_t> counts(p.n_clusters, 0);
  for (std::size_t a : p.assignment) {
    if (a >= p.n_clusters) throw std::invalid_argument("wcss: label out of range");
    ++counts[a];
  }
  if (std::find(counts.begin(), counts.end(), 0) != counts.end()) {
    throw std::invalid_argument("wcss: empty cluster");
  }
  return assignment_wcss(points, p.assignment, p.n_clusters);
}

namespace {

struct Pass {
  std::vector<std::size_t> assignment;
  std::vector<double> lloyd_wcss;
};

// Lloyd from `centroids` to a fixed point, then greedy balancing and swaps.
Pass balanced_pass(const Matrix& points, Matrix centroids, const KMeansOptions& options) {
  const std::size_t n_clusters = centroids.rows();
  Pass pass;
  std::vector<std::size_t> assignment;
  for (std::size_t it = 0; it < options.max_lloyd_iterations; ++it) {
    auto next = nearest_centroids(points, centroids);
    if (next == assignment) break;
    assignment = std::move(next);
    pass.lloyd_wcss.push_back(assignment_wcss(points, assignment, n_clusters));
    // Empty clusters keep their previous centroid.
    const Matrix means = cluster_means(points, assignment, n_clusters);
    std::vector<bool> used(n_clusters, false);
    for (std::size_t a : assignment) used[a] = true;
    for (std::size_t c = 0; c < n_clusters; ++c) {
      if (!used[c]) continue;
      auto src = means.row(c);
      std::copy(src.begin(), src.end(), centroids.row(c).begin());
    }
  }
  pass.assignment = greedy_balanced_assignment(points, centroids);
  refine_by_swaps(points, pass.assignment, n_clusters, options.max_swap_passes);
  return pass;
}

}  // namespace

ClusteringOutcome balanced_kmeans(const Matrix& points, std::size_t n_clusters,
                                  const std::optional<Partition>& init, Rng& rng,
                                  const KMeansOptions& options) {
  const std::size_t n = points.rows();
  if (n_clusters == 0 || n_clusters > n) {
    throw std::invalid_argument("balanced_kmeans: cannot form " + std::to_string(n_clusters) + " clusters from " +
                                std::to_string(n) + " rows");
  }
  if (n % n_clusters != 0) {
    throw std::invalid_argument("balanced_kmeans: " + std::to_string(n) + " rows not divisible by " +
                                std::to_string(n_clusters));
  }

  ClusteringOutcome out;
  std::vector<std::size_t> current;
  double current_wcss = std::numeric_limits<double>::infinity();
  if (init.has_value()) {
    if (init->size() != n || init->n_clusters != n_clusters) {
      throw ShapeError("balanced_kmeans: warm-start partition does not match the points");
    }
    init->require_balanced();
    // The previous partition is the incumbent; passes below replace it only by strict improvement.
    current = init->assignment;
    current_wcss = assignment_wcss(points, current, n_clusters);
    out.init_kind = InitKind::kWarmStart;
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < n_clusters; ++i) std::swap(order[i], order[i + rng.index(n - i)]);
    Matrix seeds(n_clusters, points.cols());
    for (std::size_t c = 0; c < n_clusters; ++c) {
      auto src = points.row(order[c]);
      std::copy(src.begin(), src.end(), seeds.row(c).begin());
    }
    Pass first = balanced_pass(points, std::move(seeds), options);
    out.lloyd_wcss = std::move(first.lloyd_wcss);
    current = std::move(first.assignment);
    current_wcss = assignment_wcss(points, current, n_clusters);
    out.init_kind = InitKind::kRandom;
  }

  // Restart from the balanced result's own means until WCSS stops dropping, so
  // that a warm start from the returned partition reproduces it.
  for (std::size_t round = 0; round < options.max_refinement_rounds; ++round) {
    Pass next = balanced_pass(points, cluster_means(points, current, n_clusters), options);
    if (out.lloyd_wcss.empty()) out.lloyd_wcss = std::move(next.lloyd_wcss);
    const double next_wcss = assignment_wcss(points, next.assignment, n_clusters);
    if (!(next_wcss < current_wcss)) break;
    current = std::move(next.assignment);
    current_wcss = next_wcss;
  }

  out.partition = Partition{std::move(current), n_clusters};
  out.centroids = cluster_means(points, out.partition.assignment, n_clusters);
  out.wcss = wcss(points, out.partition);
  return out;
}

ClusteringOutcome cluster_with_warmstart(const Matrix& points, std::size_t n_clusters,
                                         const std::optional<Partition>& prev, Rng& rng,
                                         const KMeansOptions& options) {
  ClusteringOutcome random_run = balanced_kmeans(points, n_clusters, std::nullopt, rng, options);
  if (!prev.has_value()) return random_run;
  ClusteringOutcome warm_run = balanced_kmeans(points, n_clusters, prev, rng, options);
  return random_run.wcss < warm_run.wcss ? std::move(random_run) : std::move(warm_run);
}

}  // namespace ssdlab
