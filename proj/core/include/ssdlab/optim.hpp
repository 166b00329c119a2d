// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssdlab/matrix.hpp"

namespace ssdlab {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

/// First/second moment accumulators aligned index-for-index with a parameter list.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Matrix> first;
  std::vector<Matrix> second;
};

/// One bias-corrected Adam update. Moments are zero-initialized on the first call.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
               AdamState& state, double lr);

/// base · d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)
double noam_lr(std::uint64_t step, std::uint64_t warmup, std::size_t d_model, double base);

}  // namespace ssdlab
