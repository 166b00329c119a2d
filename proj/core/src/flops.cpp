// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssdlab/flops.hpp"

#include <stdexcept>

namespace ssdlab {

FlopsBreakdown forward_flops_per_sequence(const ModelConfig& cfg, std::size_t seq_len,
                                          const std::variant<DenseFlops, SMoEFlops>& ffn) {
  const std::uint64_t d = cfg.d_model, dff = cfg.d_ff, t = seq_len, layers = cfg.n_layers;
  FlopsBreakdown f;
  f.attention = layers * (8 * d * d * t + 2 * d * t * (t + 1));
  f.head = 2 * d * cfg.vocab_size * t;
  if (const auto* s = std::get_if<SMoEFlops>(&ffn)) {
    if (s->n_experts == 0 || dff % s->n_experts != 0 || s->top_k < 1 || s->top_k > s->n_experts) {
      throw std::invalid_argument("flops: expert layout inconsistent with d_ff");
    }
    f.ffn = layers * 4 * d * (dff / s->n_experts) * s->top_k * t;
    f.gating = layers * 2 * s->n_experts * d * t;
  } else {
    f.ffn = layers * 4 * d * dff * t;
  }
  return f;
}

std::uint64_t training_step_flops(const ModelConfig& cfg, std::size_t seq_len, std::size_t batch_size,
                                  const std::variant<DenseFlops, SMoEFlops>& ffn) {
  return 3 * batch_size * forward_flops_per_sequence(cfg, seq_len, ffn).total();
}

FlopsEstimate flops_estimate(const ModelConfig& cfg, std::size_t seq_len, std::size_t batch_size,
                             const FlopsMode& mode) {
  FlopsEstimate e;
  const double tokens = static_cast<double>(seq_len);
  if (std::holds_alternative<DenseFlops>(mode)) {
    e.forward_per_token = static_cast<double>(forward_flops_per_sequence(cfg, seq_len, DenseFlops{}).total()) / tokens;
    e.total = training_step_flops(cfg, seq_len, batch_size, DenseFlops{});
    e.per_step = static_cast<double>(e.total);
  } else if (const auto* s = std::get_if<SMoEFlops>(&mode)) {
    e.forward_per_token = static_cast<double>(forward_flops_per_sequence(cfg, seq_len, *s).total()) / tokens;
    e.total = training_step_flops(cfg, seq_len, batch_size, *s);
    e.per_step = static_cast<double>(e.total);
    e.ffn_fraction = static_cast<double>(s->top_k) / static_cast<double>(s->n_experts);
  } else {
    const auto& ssd = std::get<SSDFlops>(mode);
    const SMoEFlops sparse{ssd.top_k, ssd.n_experts};
    const std::uint64_t dense_step = training_step_flops(cfg, seq_len, batch_size, DenseFlops{});
    const std::uint64_t sparse_step = training_step_flops(cfg, seq_len, batch_size, sparse);
    e.total = ssd.dense_steps * dense_step + ssd.sparse_steps * sparse_step;
    const std::uint64_t steps = ssd.dense_steps + ssd.sparse_steps;
    e.per_step = steps == 0 ? 0.0 : static_cast<double>(e.total) / static_cast<double>(steps);
    e.forward_per_token = e.per_step / (3.0 * static_cast<double>(batch_size) * tokens);
    e.ffn_fraction = static_cast<double>(ssd.top_k) / static_cast<double>(ssd.n_experts);
  }
  return e;
}

double ssd_speedup(const ModelConfig& cfg, std::size_t seq_len, std::size_t top_k, std::size_t n_experts,
                   double sparse_share) {
  if (!(sparse_share >= 0.0 && sparse_share <= 1.0)) throw std::invalid_argument("sparse share must lie in [0, 1]");
  const double dense = static_cast<double>(forward_flops_per_sequence(cfg, seq_len, DenseFlops{}).total());
  const double sparse =
      static_cast<double>(forward_flops_per_sequence(cfg, seq_len, SMoEFlops{top_k, n_experts}).total());
  return dense / ((1.0 - sparse_share) * dense + sparse_share * sparse);
}

}  // namespace ssdlab
