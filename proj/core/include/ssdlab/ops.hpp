// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssdlab/matrix.hpp"

namespace ssdlab {

// Differentiable primitives. Each forward is paired with a backward that takes
// the upstream gradient and whatever the forward cached.

Matrix relu(const Matrix& x);
/// Passes d_out where x > 0. The subgradient at exactly 0 is 0.
Matrix relu_backward(const Matrix& d_out, const Matrix& x);

struct LayerNormCache {
  Matrix normalized;             // (x - mean) * rstd, before the affine
  std::vector<double> rstd;      // per row
};

/// Per-row normalization to zero mean and unit variance, then gain and bias (1×cols each).
Matrix layernorm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps,
                 LayerNormCache* cache = nullptr);

struct LayerNormGrads {
  Matrix d_x;
  Matrix d_gain;
  Matrix d_bias;
};

LayerNormGrads layernorm_backward(const Matrix& d_out, const Matrix& gain,
                                  const LayerNormCache& cache);

struct CrossEntropyResult {
  double loss = 0.0;  // mean negative log-likelihood over rows
  Matrix d_logits;    // (softmax - onehot) / rows
};

/// Row-wise softmax cross-entropy with max subtraction. Throws std::out_of_range
/// for a target outside [0, logits.cols()).
CrossEntropyResult softmax_cross_entropy(const Matrix& logits, std::span<const std::int32_t> targets);

/// Row-wise softmax in place.
void softmax_rows_inplace(Matrix& x);

}  // namespace ssdlab
