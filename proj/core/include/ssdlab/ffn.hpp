// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "ssdlab/matrix.hpp"

namespace ssdlab {

/// Dense ReLU feed-forward block: y = W_o·relu(W_i·x + b_i) + b_o, applied per row.
struct FFNWeights {
  Matrix w_in;   // d_ff × d_model
  Matrix b_in;   // 1 × d_ff
  Matrix w_out;  // d_model × d_ff
  Matrix b_out;  // 1 × d_model

  static FFNWeights zeros(std::size_t d_model, std::size_t d_ff);

  std::size_t d_model() const { return w_in.cols(); }
  std::size_t d_ff() const { return w_in.rows(); }
  /// Throws ShapeError unless all four tensors agree.
  void validate() const;

  friend bool operator==(const FFNWeights&, const FFNWeights&) = default;
};

struct FFNForward {
  Matrix y;       // tokens × d_model
  Matrix pre;     // tokens × d_ff, before ReLU
  Matrix hidden;  // tokens × d_ff, after ReLU
};

FFNForward ffn_forward(const FFNWeights& w, const Matrix& x);

struct FFNBackward {
  FFNWeights grads;
  Matrix d_x;
};

FFNBackward ffn_backward(const FFNWeights& w, const Matrix& x, const FFNForward& fwd, const Matrix& d_y);

}  // namespace ssdlab
