// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssdlab/clustering.hpp"
#include "ssdlab/model.hpp"
#include "ssdlab/optim.hpp"
#include "ssdlab/rng.hpp"

namespace ssdlab {

enum class Phase : std::uint8_t { kDense = 0, kSparse = 1, kFinalDense = 2 };
enum class SwitchPolicy : std::uint8_t { kThreshold = 0, kRandom = 1 };

std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

struct SSDConfig {
  double threshold = 0.9;           // switch when mean ARI is strictly above this
  double sparse_ratio = 0.5;        // r
  double final_dense_ratio = 0.1;   // l
  std::uint64_t monitor_interval = 3000;
  std::uint64_t total_steps = 200000;
  SwitchPolicy policy = SwitchPolicy::kThreshold;
  double random_probability = 0.5;

  /// Throws std::invalid_argument unless 0 < τ <= 1, r >= 0, 0 <= l < 1, r + l < 1, interval >= 1.
  void validate() const;
  /// r / (1 - r - l)
  double sparse_multiplier() const;
  /// First step of the final dense window: total_steps - ⌈l · total_steps⌉.
  std::uint64_t final_dense_start() const;

  friend bool operator==(const SSDConfig&, const SSDConfig&) = default;
};

enum class TransitionKind : std::uint8_t { kToSparse = 0, kToDense = 1, kToFinalDense = 2 };

std::string to_string(TransitionKind k);

struct TransitionEvent {
  std::uint64_t step = 0;  // first step run in the new phase
  TransitionKind kind = TransitionKind::kToSparse;
  std::optional<double> similarity;   // the mean ARI that triggered a dense→sparse switch
  std::uint64_t sparse_budget = 0;    // T, for dense→sparse
  std::optional<double> loss_before;  // evaluation loss just before the conversion (all experts active)
  std::optional<double> loss_after;   // and just after

  friend bool operator==(const TransitionEvent&, const TransitionEvent&) = default;
};

struct SchedulerState {
  SSDConfig config;
  Phase phase = Phase::kDense;
  std::uint64_t steps_in_phase = 0;
  std::uint64_t last_dense_len = 0;  // dense steps since the previous sparse phase ended
  std::uint64_t sparse_budget = 0;   // T of the current or most recent sparse phase
  std::vector<std::optional<Partition>> prev_partitions;  // one per layer
  std::vector<TransitionEvent> events;

  static SchedulerState start(const SSDConfig& cfg, std::size_t n_layers);
  /// True when a Dense phase has just completed a whole number of monitor intervals.
  bool should_monitor() const;

  friend bool operator==(const SchedulerState&, const SchedulerState&) = default;
};

/// Sparse budget for a dense segment of `dense_len` steps that ended before `next_step`:
/// round(r/(1-r-l) · dense_len), truncated at the final dense window.
std::uint64_t sparse_budget(const SSDConfig& cfg, std::uint64_t dense_len, std::uint64_t next_step);

/// Decides a dense→sparse switch after step `step` completed. Threshold policy:
/// similarity > τ; random policy: probability `random_probability` from `rng`.
/// On a switch the phase becomes Sparse with budget T and an event is logged.
/// Throws std::logic_error outside the Dense phase.
bool on_monitor(SchedulerState& state, std::optional<double> similarity, std::uint64_t step, Rng& rng);

/// Called once before each step runs. Applies due transitions (Sparse→Dense when
/// the budget is spent, anything→FinalDense at the final window) and counts the
/// step in the resulting phase. Returns the transition taken, if any.
std::optional<TransitionKind> advance(SchedulerState& state, std::uint64_t step);

/// Replays the phase of every step in [0, total_steps) from an event log.
std::vector<Phase> replay_phases(const std::vector<TransitionEvent>& events, std::uint64_t total_steps);

// Model conversions.

/// Splits every dense FFN with the given per-layer partitions. When `optimizer`
/// is non-null, Adam moment accumulators are re-routed identically so they
/// follow their parameters (or cleared when `reset_optimizer`).
void sparsify_model(Model& model, const std::vector<Partition>& partitions, std::size_t top_k,
                    AdamState* optimizer = nullptr, bool reset_optimizer = false);
/// Merges every sparse FFN back to dense order, re-routing Adam moments likewise.
void densify_model(Model& model, AdamState* optimizer = nullptr, bool reset_optimizer = false);

/// Dense→sparse: splits with the partitions clustered at the triggering monitor
/// step and records them as the warm start for the next clustering.
void transition_dense_to_sparse(Model& model, AdamState& optimizer, SchedulerState& state,
                                const std::vector<Partition>& partitions, std::size_t top_k,
                                bool reset_optimizer = false);
/// Sparse→dense: concatenates experts; gating is discarded.
void transition_sparse_to_dense(Model& model, AdamState& optimizer, SchedulerState& state,
                                bool reset_optimizer = false);

}  // namespace ssdlab
