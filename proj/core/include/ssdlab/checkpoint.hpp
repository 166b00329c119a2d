// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ssdlab/model.hpp"
#include "ssdlab/optim.hpp"
#include "ssdlab/scheduler.hpp"

namespace ssdlab {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume a run bit-exactly.
///
/// File layout (all integers little-endian, floats IEEE-754 binary64):
///   "SSD1" | u32 version
///   config: u32 n_layers, d_model, n_heads, d_ff, vocab_size, max_seq_len | f64 ln_eps, init_std
///   u64 step | u64 seed | u64 cumulative_flops | str rng_state
///   tensors: Model::parameters() order of the dense layout, each u32 rows, u32 cols, f64[rows·cols]
///   layers: per layer u8 sparse; if 1: u32 top_k, u32 n_experts, u32[d_ff] assignment
///   u8 has_optimizer; if 1: f64 beta1, beta2, eps | u64 adam step | u8 initialized;
///     if 1: first moments then second moments, in the same dense tensor order
///   u8 has_scheduler; if 1: scheduler block (config, phase counters, per-layer
///     warm-start partitions, transition log)
/// Sparse layers and their optimizer moments are stored merged to dense order
/// and re-split on load. str = u32 length + bytes; optional f64 = u8 flag + f64.
struct Checkpoint {
  Model model;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t cumulative_flops = 0;
  std::string rng_state;
  std::optional<AdamState> optimizer;
  std::optional<SchedulerState> scheduler;
};

std::string encode_checkpoint(const Checkpoint& c);
/// Throws CheckpointError on bad magic, unsupported version, truncation or trailing bytes.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ssdlab
