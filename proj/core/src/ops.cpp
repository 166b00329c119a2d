// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssdlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ssdlab {

Matrix relu(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Matrix relu_backward(const Matrix& d_out, const Matrix& x) {
  if (!d_out.same_shape(x)) throw ShapeError("relu_backward: " + shape_string(d_out) + " vs " + shape_string(x));
  Matrix d(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] > 0.0 ? d_out[i] : 0.0;
  return d;
}

Matrix layernorm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps,
                 LayerNormCache* cache) {
  const std::size_t n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    throw ShapeError("layernorm: gain/bias length must equal " + std::to_string(n));
  }
  if (!(eps > 0.0)) throw std::invalid_argument("layernorm: eps must be positive");
  Matrix y(x.rows(), n);
  if (cache != nullptr) {
    cache->normalized = Matrix(x.rows(), n);
    cache->rstd.assign(x.rows(), 0.0);
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + eps);
    auto out = y.row(r);
    for (std::size_t j = 0; j < n; ++j) {
      const double xhat = (row[j] - mean) * rstd;
      if (cache != nullptr) cache->normalized(r, j) = xhat;
      out[j] = xhat * gain[j] + bias[j];
    }
    if (cache != nullptr) cache->rstd[r] = rstd;
  }
  return y;
}

LayerNormGrads layernorm_backward(const Matrix& d_out, const Matrix& gain,
                                  const LayerNormCache& cache) {
  const Matrix& xhat = cache.normalized;
  if (!d_out.same_shape(xhat)) throw ShapeError("layernorm_backward: gradient shape mismatch");
  const std::size_t n = xhat.cols();
  LayerNormGrads g{Matrix(xhat.rows(), n), Matrix(1, n), Matrix(1, n)};
  for (std::size_t r = 0; r < xhat.rows(); ++r) {
    auto dy = d_out.row(r);
    auto xh = xhat.row(r);
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double dxhat = dy[j] * gain[j];
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * xh[j];
      g.d_gain[j] += dy[j] * xh[j];
      g.d_bias[j] += dy[j];
    }
    mean_dxhat /= static_cast<double>(n);
    mean_dxhat_xhat /= static_cast<double>(n);
    auto dx = g.d_x.row(r);
    for (std::size_t j = 0; j < n; ++j) {
      const double dxhat = dy[j] * gain[j];
      dx[j] = cache.rstd[r] * (dxhat - mean_dxhat - xh[j] * mean_dxhat_xhat);
    }
  }
  return g;
}

void softmax_rows_inplace(Matrix& x) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    if (row.empty()) continue;
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
}

CrossEntropyResult softmax_cross_entropy(const Matrix& logits, std::span<const std::int32_t> targets) {
  if (targets.size() != logits.rows()) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(logits.rows()) + " rows");
  }
  const std::size_t rows = logits.rows();
  CrossEntropyResult res{0.0, logits};
  for (std::size_t r = 0; r < rows; ++r) {
    const auto t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= logits.cols()) {
      throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(t) + " outside [0, " +
                              std::to_string(logits.cols()) + ")");
    }
    auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double log_z = mx + std::log(sum);
    res.loss += log_z - row[static_cast<std::size_t>(t)];
    auto d = res.d_logits.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) d[j] = std::exp(row[j] - log_z);
    d[static_cast<std::size_t>(t)] -= 1.0;
  }
  if (rows > 0) {
    res.loss /= static_cast<double>(rows);
    const double inv = 1.0 / static_cast<double>(rows);
    for (double& v : res.d_logits.values()) v *= inv;
  }
  return res;
}

}  // namespace ssdlab
