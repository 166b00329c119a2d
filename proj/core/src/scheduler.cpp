// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssdlab/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ssdlab {

std::string to_string(Phase p) {
  switch (p) {
    case Phase::kDense:
      return "dense";
    case Phase::kSparse:
      return "sparse";
    case Phase::kFinalDense:
      return "final_dense";
  }
  return "unknown";
}

Phase phase_from_string(const std::string& s) {
  if (s == "dense") return Phase::kDense;
  if (s == "sparse") return Phase::kSparse;
  if (s == "final_dense") return Phase::kFinalDense;
  throw std::invalid_argument("unknown phase '" + s + "'");
}

std::string to_string(TransitionKind k) {
  switch (k) {
    case TransitionKind::kToSparse:
      return "to_sparse";
    case TransitionKind::kToDense:
      return "to_dense";
    case TransitionKind::kToFinalDense:
      return "to_final_dense";
  }
  return "unknown";
}

void SSDConfig::validate() const {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw std::invalid_argument("ssd: threshold must lie in (0, 1]");
  if (!(sparse_ratio >= 0.0)) throw std::invalid_argument("ssd: sparse ratio must be >= 0");
  if (!(final_dense_ratio >= 0.0 && final_dense_ratio < 1.0)) {
    throw std::invalid_argument("ssd: final dense ratio must lie in [0, 1)");
  }
  if (!(sparse_ratio + final_dense_ratio < 1.0)) throw std::invalid_argument("ssd: r + l must be < 1");
  if (monitor_interval < 1) throw std::invalid_argument("ssd: monitor interval must be >= 1");
  if (!(random_probability >= 0.0 && random_probability <= 1.0)) {
    throw std::invalid_argument("ssd: random switch probability must lie in [0, 1]");
  }
}

double SSDConfig::sparse_multiplier() const { return sparse_ratio / (1.0 - sparse_ratio - final_dense_ratio); }

std::uint64_t SSDConfig::final_dense_start() const {
  // The slack absorbs representation error such as 0.1 · 200000 = 20000.000000000004.
  const double window = std::ceil(final_dense_ratio * static_cast<double>(total_steps) - 1e-9);
  const auto w = static_cast<std::uint64_t>(std::max(0.0, window));
  return total_steps - std::min(total_steps, w);
}

SchedulerState SchedulerState::start(const SSDConfig& cfg, std::size_t n_layers) {
  cfg.validate();
  SchedulerState s;
  s.config = cfg;
  s.prev_partitions.assign(n_layers, std::nullopt);
  return s;
}

bool SchedulerState::should_monitor() const {
  return phase == Phase::kDense && last_dense_len > 0 && last_dense_len % config.monitor_interval == 0;
}

std::uint64_t sparse_budget(const SSDConfig& cfg, std::uint64_t dense_len, std::uint64_t next_step) {
  const double raw = std::round(cfg.sparse_multiplier() * static_cast<double>(dense_len));
  auto t = static_cast<std::uint64_t>(std::max(0.0, raw));
  const std::uint64_t end = cfg.final_dense_start();
  const std::uint64_t room = next_step >= end ? 0 : end - next_step;
  return std::min(t, room);
}

bool on_monitor(SchedulerState& state, std::optional<double> similarity, std::uint64_t step, Rng& rng) {
  if (state.phase != Phase::kDense) throw std::logic_error("on_monitor called outside the dense phase");
  bool fire = false;
  if (state.config.policy == SwitchPolicy::kThreshold) {
    fire = similarity.has_value() && *similarity > state.config.threshold;
  } else {
    fire = rng.bernoulli(state.config.random_probability);
  }
  if (!fire) return false;
  const std::uint64_t budget = sparse_budget(state.config, state.last_dense_len, step + 1);
  if (budget == 0) return false;
  state.phase = Phase::kSparse;
  state.steps_in_phase = 0;
  state.sparse_budget = budget;
  TransitionEvent ev;
  ev.step = step + 1;
  ev.kind = TransitionKind::kToSparse;
  ev.similarity = similarity;
  ev.sparse_budget = budget;
  state.events.push_back(ev);
  return true;
}

std::optional<TransitionKind> advance(SchedulerState& state, std::uint64_t step) {
  std::optional<TransitionKind> taken;
  if (state.phase != Phase::kFinalDense && step >= state.config.final_dense_start()) {
    state.phase = Phase::kFinalDense;
    state.steps_in_phase = 0;
    taken = TransitionKind::kToFinalDense;
  } else if (state.phase == Phase::kSparse && state.steps_in_phase >= state.sparse_budget) {
    state.phase = Phase::kDense;
    state.steps_in_phase = 0;
    state.last_dense_len = 0;
    taken = TransitionKind::kToDense;
  }
  if (taken.has_value()) state.events.push_back(TransitionEvent{step, *taken, std::nullopt, 0, std::nullopt, std::nullopt});
  ++state.steps_in_phase;
  if (state.phase == Phase::kDense) ++state.last_dense_len;
  return taken;
}

std::vector<Phase> replay_phases(const std::vector<TransitionEvent>& events, std::uint64_t total_steps) {
  std::vector<Phase> out(total_steps, Phase::kDense);
  Phase current = Phase::kDense;
  std::size_t next = 0;
  for (std::uint64_t s = 0; s < total_steps; ++s) {
    while (next < events.size() && events[next].step == s) {
      switch (events[next].kind) {
        case TransitionKind::kToSparse:
          current = Phase::kSparse;
          break;
        case TransitionKind::kToDense:
          current = Phase::kDense;
          break;
        case TransitionKind::kToFinalDense:
          current = Phase::kFinalDense;
          break;
      }
      ++next;
    }
    out[s] = current;
  }
  return out;
}

namespace {

void convert_blocks_to_sparse(Model& m, const std::vector<Partition>& partitions, std::size_t top_k) {
  if (partitions.size() != m.blocks.size()) throw std::invalid_argument("sparsify: one partition per layer required");
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    auto& blk = m.blocks[l];
    if (blk.is_sparse()) throw std::logic_error("sparsify: layer " + std::to_string(l) + " is already sparse");
    blk.ffn = split_ffn(std::get<FFNWeights>(blk.ffn), partitions[l], top_k);
  }
}

void convert_blocks_to_dense(Model& m) {
  for (auto& blk : m.blocks) {
    if (blk.is_sparse()) blk.ffn = merge_experts(std::get<SMoEFFN>(blk.ffn));
  }
}

// Applies `convert` to a model-shaped copy holding each moment tensor list.
template <typename Convert>
void reroute_moments(const Model& before, AdamState& opt, bool reset, Convert convert) {
  if (reset) {
    opt.first.clear();
    opt.second.clear();
    opt.step = 0;
    return;
  }
  if (opt.first.empty() && opt.second.empty()) return;
  for (auto* moments : {&opt.first, &opt.second}) {
    Model shadow = before;
    shadow.assign_parameters(*moments);
    convert(shadow);
    *moments = shadow.parameter_values();
  }
}

}  // namespace

void sparsify_model(Model& model, const std::vector<Partition>& partitions, std::size_t top_k, AdamState* optimizer,
                    bool reset_optimizer) {
  const Model before = optimizer != nullptr ? model : Model{};
  convert_blocks_to_sparse(model, partitions, top_k);
  if (optimizer != nullptr) {
    reroute_moments(before, *optimizer, reset_optimizer,
                    [&](Model& shadow) { convert_blocks_to_sparse(shadow, partitions, top_k); });
  }
}

void densify_model(Model& model, AdamState* optimizer, bool reset_optimizer) {
  const Model before = optimizer != nullptr ? model : Model{};
  convert_blocks_to_dense(model);
  if (optimizer != nullptr) {
    reroute_moments(before, *optimizer, reset_optimizer, [](Model& shadow) { convert_blocks_to_dense(shadow); });
  }
}

void transition_dense_to_sparse(Model& model, AdamState& optimizer, SchedulerState& state,
                                const std::vector<Partition>& partitions, std::size_t top_k, bool reset_optimizer) {
  if (state.phase != Phase::kSparse) throw std::logic_error("dense-to-sparse conversion without a sparse phase");
  sparsify_model(model, partitions, top_k, &optimizer, reset_optimizer);
  state.prev_partitions.assign(partitions.begin(), partitions.end());
}

void transition_sparse_to_dense(Model& model, AdamState& optimizer, SchedulerState& state, bool reset_optimizer) {
  if (state.phase == Phase::kSparse) throw std::logic_error("sparse-to-dense conversion during a sparse phase");
  densify_model(model, &optimizer, reset_optimizer);
}

}  // namespace ssdlab
