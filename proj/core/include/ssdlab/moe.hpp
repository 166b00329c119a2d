// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ssdlab/clustering.hpp"
#include "ssdlab/ffn.hpp"
#include "ssdlab/matrix.hpp"

namespace ssdlab {

/// One expert: a contiguous slice of d_ff / N neurons.
struct Expert {
  Matrix w_in;   // (d_ff/N) × d_model
  Matrix b_in;   // 1 × (d_ff/N)
  Matrix w_out;  // d_model × (d_ff/N)

  friend bool operator==(const Expert&, const Expert&) = default;
};

/// FFN partitioned into N experts, K of which run per token.
///
/// `neurons[n][r]` is the original dense index of row r of expert n (ascending
/// within an expert). Concatenating experts in that order restores the dense
/// block. b_out is shared and added once. Gate keys (expert centroids) are not
/// stored: they are recomputed from W_i,n on every use.
struct SMoEFFN {
  std::size_t top_k = 1;
  std::vector<Expert> experts;
  Matrix b_out;  // 1 × d_model
  Partition partition;
  std::vector<std::vector<std::size_t>> neurons;

  std::size_t n_experts() const { return experts.size(); }
  std::size_t d_model() const { return b_out.cols(); }
  std::size_t group_size() const { return experts.empty() ? 0 : experts.front().w_in.rows(); }
  std::size_t d_ff() const { return n_experts() * group_size(); }

  /// Checks shapes and that `neurons` is a permutation of 0..d_ff-1 consistent
  /// with `partition`. Throws std::invalid_argument otherwise.
  void validate() const;
};

/// Routing for one token. `selected` lists chosen experts by descending score
/// (ties: lower expert index first). Selected experts contribute with value 1;
/// the raw score stays on the derivative path.
struct GateDecision {
  std::vector<double> scores;
  std::vector<std::size_t> selected;

  bool is_selected(std::size_t expert) const;
  double coefficient(std::size_t expert) const { return is_selected(expert) ? 1.0 : 0.0; }
};

SMoEFFN split_ffn(const FFNWeights& w, const Partition& p, std::size_t top_k);
FFNWeights merge_experts(const SMoEFFN& m);

/// Centroid c_n = (N / d_ff) · Σ rows of W_i,n, as an N × d_model matrix.
Matrix compute_centroids(const SMoEFFN& m);

/// Scores α_n = x·c_n and picks the top `top_k`.
GateDecision gate(const Matrix& centroids, std::span<const double> x, std::size_t top_k);
GateDecision gate(const SMoEFFN& m, std::span<const double> x);
std::vector<GateDecision> gate_batch(const SMoEFFN& m, const Matrix& x, std::size_t top_k);

/// Batch-level truncation: pool every (token, expert) candidate, keep the
/// ⌈(1-ratio)·candidates⌉ with the highest raw score, then restore each
/// token's best expert if it was dropped. Requires 0 <= ratio < 1.
std::vector<GateDecision> dynamic_topk(const std::vector<GateDecision>& decisions, double ratio);

struct SMoEForward {
  Matrix y;                             // tokens × d_model
  Matrix pre;                           // tokens × d_ff in dense neuron order; 0 where not computed
  Matrix hidden;                        // tokens × d_ff in dense neuron order; 0 where not computed
  Matrix centroids;                     // gate keys used for this batch
  std::vector<GateDecision> decisions;  // one per token
};

/// Routes with the module's own top_k.
SMoEForward smoe_forward(const SMoEFFN& m, const Matrix& x);
/// Uses caller-supplied routing (e.g. from dynamic_topk).
SMoEForward smoe_forward(const SMoEFFN& m, const Matrix& x, std::vector<GateDecision> decisions);

struct SMoEBackward {
  std::vector<Expert> experts;  // gradients, same shapes as the module's experts
  Matrix b_out;
  Matrix d_x;
};

/// Gradients of the expert computation plus the straight-through gate path:
/// for each selected expert, dL/dα_n = d_y·(W_o,n h_n) flows into x via c_n and
/// into every row of W_i,n via ∂c_n/∂W_i,n = N/d_ff. Experts chosen by no token
/// receive exactly zero gradient.
SMoEBackward smoe_backward(const SMoEFFN& m, const Matrix& x, const SMoEForward& fwd, const Matrix& d_y);

}  // namespace ssdlab
