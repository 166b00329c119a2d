// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <variant>

#include "ssdlab/model.hpp"

namespace ssdlab {

// Analytic FLOPs model. A multiply-add counts as 2 FLOPs. Counted per layer:
// the four attention projections (8·d²), causal score and value products
// (2·d·T·(T+1) per sequence), and the FFN (4·d·d_ff dense; (K/N) of that plus
// 2·N·d gating when sparse). The output head adds 2·d·vocab per token.
// Embedding lookups, biases, norms, softmax and ReLU are not counted. A
// training step costs 3× the forward pass.

struct DenseFlops {};
struct SMoEFlops {
  std::size_t top_k;
  std::size_t n_experts;
};
/// Step-weighted mix of dense and sparse steps.
struct SSDFlops {
  std::size_t top_k;
  std::size_t n_experts;
  std::uint64_t dense_steps;
  std::uint64_t sparse_steps;
};
using FlopsMode = std::variant<DenseFlops, SMoEFlops, SSDFlops>;

struct FlopsBreakdown {
  std::uint64_t attention = 0;  // all layers
  std::uint64_t ffn = 0;        // all layers, experts only
  std::uint64_t gating = 0;     // all layers
  std::uint64_t head = 0;
  std::uint64_t total() const { return attention + ffn + gating + head; }
};

/// Forward FLOPs for one sequence of `seq_len` tokens with every FFN dense or every FFN sparse.
FlopsBreakdown forward_flops_per_sequence(const ModelConfig& cfg, std::size_t seq_len,
                                          const std::variant<DenseFlops, SMoEFlops>& ffn);

/// FLOPs of one training step (forward + backward) over batch_size sequences.
std::uint64_t training_step_flops(const ModelConfig& cfg, std::size_t seq_len, std::size_t batch_size,
                                  const std::variant<DenseFlops, SMoEFlops>& ffn);

struct FlopsEstimate {
  double forward_per_token = 0.0;
  /// Mean training FLOPs per step (exact integer for dense and SMoE modes).
  double per_step = 0.0;
  /// Total for SSD mode over dense_steps + sparse_steps; per_step × 1 otherwise.
  std::uint64_t total = 0;
  /// Sparse-to-dense FFN expert compute ratio (K/N), 1 for dense.
  double ffn_fraction = 1.0;
};

FlopsEstimate flops_estimate(const ModelConfig& cfg, std::size_t seq_len, std::size_t batch_size,
                             const FlopsMode& mode);

/// Whole-model training speedup of SSD over dense for a given sparse-step share.
double ssd_speedup(const ModelConfig& cfg, std::size_t seq_len, std::size_t top_k, std::size_t n_experts,
                   double sparse_share);

}  // namespace ssdlab
