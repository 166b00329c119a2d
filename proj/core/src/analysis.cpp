// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssdlab/analysis.hpp"

#include <algorithm>
#include <cstdlib>
#include <future>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>

namespace ssdlab {

std::vector<double> activation_sparsity(const ActivationSample& sample) {
  std::vector<double> out;
  out.reserve(sample.layers.size());
  for (const Matrix& h : sample.layers) {
    if (h.size() == 0) {
      out.push_back(0.0);
      continue;
    }
    std::size_t zeros = 0;
    for (double v : h.values()) zeros += (v == 0.0);
    out.push_back(static_cast<double>(zeros) / static_cast<double>(h.size()));
  }
  return out;
}

double mean_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

namespace {

double choose2(double n) { return n * (n - 1.0) / 2.0; }

bool same_up_to_relabeling(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::map<std::size_t, std::size_t> fwd, bwd;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [fi, fnew] = fwd.emplace(a[i], b[i]);
    auto [bi, bnew] = bwd.emplace(b[i], a[i]);
    if ((!fnew && fi->second != b[i]) || (!bnew && bi->second != a[i])) return false;
  }
  return true;
}

}  // namespace

double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("adjusted_rand_index: lengths " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " differ");
  }
  if (a.size() < 2) throw std::invalid_argument("adjusted_rand_index: need at least two items");
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> table;
  std::map<std::size_t, std::size_t> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++table[{a[i], b[i]}];
    ++rows[a[i]];
    ++cols[b[i]];
  }
  double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (const auto& [key, n] : table) index += choose2(static_cast<double>(n));
  for (const auto& [key, n] : rows) sum_rows += choose2(static_cast<double>(n));
  for (const auto& [key, n] : cols) sum_cols += choose2(static_cast<double>(n));
  const double expected = sum_rows * sum_cols / choose2(static_cast<double>(a.size()));
  const double denom = 0.5 * (sum_rows + sum_cols) - expected;
  if (denom == 0.0) return same_up_to_relabeling(a, b) ? 1.0 : 0.0;
  return (index - expected) / denom;
}

std::vector<Matrix> ffn_input_weights(const Model& model) {
  std::vector<Matrix> out;
  out.reserve(model.blocks.size());
  for (const auto& blk : model.blocks) {
    if (const auto* dense = std::get_if<FFNWeights>(&blk.ffn)) {
      out.push_back(dense->w_in);
    } else {
      out.push_back(merge_experts(std::get<SMoEFFN>(blk.ffn)).w_in);
    }
  }
  return out;
}

std::size_t configured_threads() {
  const char* env = std::getenv("SSDLAB_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) {
    throw std::invalid_argument(std::string("SSDLAB_THREADS must be a positive integer, got '") + env + "'");
  }
  return static_cast<std::size_t>(v);
}

namespace {

// Runs job(l) for every layer; results are independent of the task count.
template <typename Fn>
auto per_layer(std::size_t layers, std::size_t threads, Fn job) {
  using R = decltype(job(std::size_t{0}));
  std::vector<R> out(layers);
  if (threads <= 1) {
    for (std::size_t l = 0; l < layers; ++l) out[l] = job(l);
    return out;
  }
  for (std::size_t start = 0; start < layers; start += threads) {
    std::vector<std::future<R>> tasks;
    for (std::size_t l = start; l < std::min(layers, start + threads); ++l) {
      tasks.push_back(std::async(std::launch::async, job, l));
    }
    for (std::size_t i = 0; i < tasks.size(); ++i) out[start + i] = tasks[i].get();
  }
  return out;
}

}  // namespace

SimilarityReport pattern_similarity(const Model& a, const Model& b, const PatternOptions& options,
                                    std::uint64_t step_a, std::uint64_t step_b) {
  if (!(a.config == b.config)) throw std::invalid_argument("pattern_similarity: model configs differ");
  const auto wa = ffn_input_weights(a);
  const auto wb = ffn_input_weights(b);
  SimilarityReport rep;
  rep.step_a = step_a;
  rep.step_b = step_b;
  rep.per_layer = per_layer(wa.size(), configured_threads(), [&](std::size_t l) {
    const std::uint64_t seed = mix64(options.seed ^ mix64(l));
    Rng ra(seed);
    const ClusteringOutcome ca = cluster_with_warmstart(wa[l], options.n_experts, std::nullopt, ra);
    Rng rb(seed);
    const std::optional<Partition> prev =
        options.independent ? std::nullopt : std::optional<Partition>(ca.partition);
    const ClusteringOutcome cb = cluster_with_warmstart(wb[l], options.n_experts, prev, rb);
    return adjusted_rand_index(ca.partition, cb.partition);
  });
  rep.mean = mean_of(rep.per_layer);
  return rep;
}

PatternMeasurement measure_activation_pattern(const Model& model, const std::vector<std::optional<Partition>>& prev,
                                              std::size_t n_experts, Rng& rng, bool independent,
                                              std::size_t threads) {
  const auto w = ffn_input_weights(model);
  if (prev.size() != w.size()) throw std::invalid_argument("measure_activation_pattern: one slot per layer required");
  std::vector<std::uint64_t> seeds(w.size());
  for (std::size_t l = 0; l < w.size(); ++l) seeds[l] = rng.derive_seed(l);

  PatternMeasurement m;
  m.outcomes = per_layer(w.size(), threads, [&](std::size_t l) {
    Rng r(seeds[l]);
    const std::optional<Partition> init = independent ? std::nullopt : prev[l];
    return cluster_with_warmstart(w[l], n_experts, init, r);
  });
  bool all = !w.empty();
  std::vector<double> scores;
  for (std::size_t l = 0; l < w.size(); ++l) {
    if (prev[l].has_value()) {
      const double s = adjusted_rand_index(*prev[l], m.outcomes[l].partition);
      m.ari.emplace_back(s);
      scores.push_back(s);
    } else {
      m.ari.emplace_back(std::nullopt);
      all = false;
    }
  }
  if (all) m.mean_ari = mean_of(scores);
  return m;
}

}  // namespace ssdlab
