// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ssdlab/scheduler.hpp"

namespace ssdlab {

/// One training step.
struct MetricsRecord {
  std::uint64_t step = 0;
  Phase phase = Phase::kDense;
  double loss = 0.0;
  std::optional<double> ppl;         // validation perplexity, on evaluation steps
  std::vector<double> sparsity;      // per layer, on sampling steps; empty otherwise
  std::optional<double> similarity;  // mean ARI, on monitor steps with a previous partition
  std::uint64_t flops = 0;           // cumulative training FLOPs after this step
  double lr = 0.0;
  std::vector<TransitionEvent> events;  // scheduler transitions logged during this step

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

enum class MetricsFormat { kCsv, kJsonLines };

MetricsFormat metrics_format_from_string(const std::string& s);

/// Throws std::invalid_argument unless steps strictly increase and FLOPs never decrease.
void validate_metrics(const std::vector<MetricsRecord>& records);

/// CSV columns: step, phase, loss, ppl, sparsity_layer_0 … sparsity_layer_{L-1},
/// similarity, flops, lr. Missing values are empty cells; events are omitted.
std::string metrics_to_csv(const std::vector<MetricsRecord>& records, std::size_t n_layers);

/// One JSON object per line with keys step, phase, loss, ppl, sparsity,
/// similarity, flops, lr, events. Doubles are written in shortest round-trip form.
std::string metrics_to_jsonl(const std::vector<MetricsRecord>& records);
std::string metrics_record_to_json(const MetricsRecord& record);
std::vector<MetricsRecord> parse_metrics_jsonl(std::string_view text);

/// Writes the stream in `format`. Throws std::runtime_error for an unwritable path.
void export_metrics(const std::vector<MetricsRecord>& records, std::size_t n_layers, MetricsFormat format,
                    const std::filesystem::path& path);

std::vector<MetricsRecord> read_metrics_jsonl(const std::filesystem::path& path);

}  // namespace ssdlab
