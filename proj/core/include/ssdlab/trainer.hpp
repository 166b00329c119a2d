// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ssdlab/checkpoint.hpp"
#include "ssdlab/corpus.hpp"
#include "ssdlab/metrics.hpp"
#include "ssdlab/model.hpp"
#include "ssdlab/optim.hpp"
#include "ssdlab/scheduler.hpp"

namespace ssdlab {

enum class TrainMode { kDense, kSMoE, kSSD };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

/// Every knob of a run. Serialized as one JSON object; keys mirror field names
/// (nested objects "model", "adam", "ssd"). Missing keys keep their defaults,
/// unknown keys are rejected.
struct TrainConfig {
  ModelConfig model = ModelConfig::desk();
  TrainMode mode = TrainMode::kDense;
  std::uint64_t seed = 0;
  std::uint64_t steps = 5000;
  std::size_t batch_size = 8;
  std::size_t seq_len = 32;
  double validation_fraction = 0.1;

  AdamConfig adam;
  std::uint64_t warmup_steps = 2000;
  double lr_base = 0.5;

  std::size_t smoe_experts = 3;  // fixed-SMoE preset
  std::size_t smoe_top_k = 2;
  std::size_t ssd_experts = 32;  // SSD and MoEfication preset
  std::size_t ssd_top_k = 6;
  SSDConfig ssd;                 // ssd.total_steps is forced to `steps`
  bool reset_optimizer_on_transition = false;
  bool independent_clustering = false;

  std::uint64_t validation_interval = 500;
  std::size_t validation_sequences = 64;
  std::uint64_t sparsity_interval = 100;
  std::uint64_t checkpoint_interval = 4000;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
  SSDConfig scheduler_config() const;

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
};

struct TrainOptions {
  /// Stop after this many total steps (a checkpoint is written there); defaults to config.steps.
  std::optional<std::uint64_t> stop_at;
  /// Continue from this checkpoint. Metrics recorded before its step are kept
  /// from the run directory's metrics.jsonl when present.
  std::optional<std::filesystem::path> resume_from;
  std::size_t threads = 1;
  /// Called after each step's record is final.
  std::function<void(const MetricsRecord&)> on_record;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRecord> metrics;
};

/// Runs training. Writes into `run_dir`: config.json, manifest.json,
/// ckpt_<step>.ssd every checkpoint_interval steps, final.ssd (or the stop
/// checkpoint), metrics.jsonl and metrics.csv.
TrainResult train(const TrainConfig& config, const TokenizedCorpus& corpus, const std::filesystem::path& run_dir,
                  const TrainOptions& options = {});

/// Batch of step `step`, drawn from an RNG keyed on (seed, step) alone so that
/// monitoring and resumption never perturb the data order.
TokenBatch training_batch(const TrainConfig& config, std::span<const std::int32_t> stream, std::uint64_t step);

/// Mean next-token NLL over `eval`, in chunks of `chunk` sequences.
double evaluation_loss(const Model& model, const TokenBatch& eval, const SparseEvalOptions& sparse = {},
                       std::size_t chunk = 16);

/// Per-layer activation sparsity of the FFN hidden states over every position of `inputs`.
std::vector<double> model_sparsity(const Model& model, const TokenBatch& inputs);

/// Clusters every layer's W_i into `n_experts` balanced groups (random init)
/// and splits each FFN with `top_k` selected experts. Dense layout required.
Model moefy(const Model& model, std::size_t n_experts, std::size_t top_k, std::uint64_t seed,
            std::size_t threads = 1);

struct SparseEvalConfig {
  std::size_t top_k = 6;
  double dynamic_ratio = 0.0;
  std::size_t n_experts = 32;  // used only when the model is dense and must be MoEfied
  std::uint64_t seed = 0;
};

/// exp(mean NLL) on `eval`. With `sparse`, a dense model is MoEfied first and
/// a sparse model keeps its own partition with K overridden.
double eval_perplexity(const Model& model, const TokenBatch& eval, const std::optional<SparseEvalConfig>& sparse = {},
                       std::size_t threads = 1);

}  // namespace ssdlab
