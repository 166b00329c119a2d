// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "ssdlab/ffn.hpp"
#include "ssdlab/matrix.hpp"
#include "ssdlab/moe.hpp"
#include "ssdlab/rng.hpp"

namespace ssdlab {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 96;
  std::size_t n_heads = 4;
  std::size_t d_ff = 768;
  std::size_t vocab_size = 256;
  std::size_t max_seq_len = 64;
  double ln_eps = 1e-5;
  double init_std = 0.02;

  /// 4 layers, d_model 96, d_ff 768: d_ff splits into 3 or 32 experts.
  static ModelConfig desk();
  /// 2 layers, d_model 32, d_ff 192. Small enough for 10k CPU steps in minutes.
  static ModelConfig toy();
  /// 12 layers, d_model 768, 12 heads, d_ff 6144, GPT-2 sized vocabulary, 512 positions.
  static ModelConfig paper();

  std::size_t head_dim() const { return d_model / n_heads; }
  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct AttentionWeights {
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;  // d_model × d_model projections (out × in), 1 × d_model biases
};

/// Pre-LN block: x + Attn(LN1(x)), then + FFN(LN2(·)).
struct TransformerBlock {
  Matrix ln1_gain, ln1_bias;
  AttentionWeights attn;
  Matrix ln2_gain, ln2_bias;
  std::variant<FFNWeights, SMoEFFN> ffn;

  bool is_sparse() const { return std::holds_alternative<SMoEFFN>(ffn); }
};

/// Decoder-only LM with learned positions and an untied output head.
struct Model {
  ModelConfig config;
  Matrix tok_emb;  // vocab × d_model
  Matrix pos_emb;  // max_seq_len × d_model
  std::vector<TransformerBlock> blocks;
  Matrix lnf_gain, lnf_bias;
  Matrix head_w;  // vocab × d_model
  Matrix head_b;  // 1 × vocab

  /// Weights ~ N(0, init_std²), biases 0, LayerNorm gains 1.
  static Model init(const ModelConfig& cfg, Rng& rng);
  /// Same structure (dense/sparse layout included) with every parameter zeroed.
  Model zeros_like() const;

  /// Trainable tensors in the fixed serialization order:
  /// tok_emb, pos_emb; per block ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo,
  /// ln2_gain, ln2_bias, then FFN (dense: w_in, b_in, w_out, b_out; sparse: per
  /// expert w_in, b_in, w_out, then the shared b_out); lnf_gain, lnf_bias, head_w, head_b.
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  std::vector<Matrix> parameter_values() const;
  /// Copies `values` into the parameter slots; shapes must match.
  void assign_parameters(const std::vector<Matrix>& values);
  std::size_t parameter_count() const;
  bool any_sparse() const;
};

/// Sequences of equal length, row-major ids. Inputs are positions 0..length-2,
/// targets positions 1..length-1.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int32_t> ids;

  std::size_t predicted_positions() const { return length == 0 ? 0 : length - 1; }
  std::span<const std::int32_t> sequence(std::size_t b) const { return {ids.data() + b * length, length}; }
};

/// Overrides for sparse layers during evaluation.
struct SparseEvalOptions {
  std::optional<std::size_t> top_k;  // replaces each layer's own K
  double dynamic_ratio = 0.0;        // > 0 applies dynamic_topk after the fixed-K gate
};

struct LossResult {
  double loss = 0.0;              // mean next-token NLL
  Model grads;                    // same layout as the model; empty unless requested
  std::vector<Matrix> hidden;     // per layer, tokens × d_ff post-ReLU (dense neuron order)
};

struct LossOptions {
  bool compute_gradients = true;
  bool capture_hidden = false;
  SparseEvalOptions sparse;
};

/// Next-token cross-entropy, averaged over predicted positions, with optional
/// full backward pass. Throws std::out_of_range for an id outside the vocabulary
/// and std::invalid_argument for sequences longer than max_seq_len + 1.
LossResult lm_loss(const Model& model, const TokenBatch& batch, const LossOptions& options = {});

/// One block on a (batch·seq_len) × d_model activation matrix.
Matrix block_forward(const TransformerBlock& block, const ModelConfig& cfg, const Matrix& x, std::size_t batch,
                     std::size_t seq_len);

/// Logits for every position of `inputs`, treating all `length` ids as inputs:
/// a (batch·length) × vocab matrix.
Matrix forward_logits(const Model& model, const TokenBatch& inputs, const SparseEvalOptions& sparse = {});

}  // namespace ssdlab
