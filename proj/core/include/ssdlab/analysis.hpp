// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "ssdlab/clustering.hpp"
#include "ssdlab/matrix.hpp"
#include "ssdlab/model.hpp"
#include "ssdlab/rng.hpp"

namespace ssdlab {

/// Post-ReLU FFN hidden states, one tokens × d_ff matrix per layer.
struct ActivationSample {
  std::vector<Matrix> layers;
  std::uint64_t step = 0;
};

/// Fraction of exact zeros per layer.
std::vector<double> activation_sparsity(const ActivationSample& sample);
double mean_of(const std::vector<double>& values);

/// Hubert-Arabie adjusted Rand index from the contingency table. Labels need not
/// be contiguous. When the index is undefined (zero denominator), returns 1 if
/// the partitions agree up to relabeling and 0 otherwise.
double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);
inline double adjusted_rand_index(const Partition& a, const Partition& b) {
  return adjusted_rand_index(a.assignment, b.assignment);
}

/// W_i of each layer, merging sparse layers back to dense neuron order.
std::vector<Matrix> ffn_input_weights(const Model& model);

struct SimilarityReport {
  std::vector<double> per_layer;
  double mean = 0.0;
  std::uint64_t step_a = 0;
  std::uint64_t step_b = 0;
};

struct PatternOptions {
  std::size_t n_experts = 32;
  std::uint64_t seed = 0;
  /// Cluster the second model without the first one's partition as warm start.
  bool independent = false;
};

/// Clusters every layer's W_i in both models and reports ARI between the two
/// partitions. Layer l of both models uses the same random stream, derived
/// from (seed, l). Throws std::invalid_argument if the configs differ.
SimilarityReport pattern_similarity(const Model& a, const Model& b, const PatternOptions& options,
                                    std::uint64_t step_a = 0, std::uint64_t step_b = 0);

/// One monitoring measurement during training: clusters the current W_i of
/// every layer (warm-started from `prev` unless `independent`) and, where a
/// previous partition exists, scores ARI against it.
struct PatternMeasurement {
  std::vector<ClusteringOutcome> outcomes;
  std::vector<std::optional<double>> ari;  // per layer; empty where there was no previous partition
  std::optional<double> mean_ari;          // set only if every layer had a previous partition
};

PatternMeasurement measure_activation_pattern(const Model& model, const std::vector<std::optional<Partition>>& prev,
                                              std::size_t n_experts, Rng& rng, bool independent = false,
                                              std::size_t threads = 1);

/// Task count from SSDLAB_THREADS (default 1).
std::size_t configured_threads();

}  // namespace ssdlab
