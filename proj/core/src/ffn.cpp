// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssdlab/ffn.hpp"

#include "ssdlab/ops.hpp"

namespace ssdlab {

FFNWeights FFNWeights::zeros(std::size_t d_model, std::size_t d_ff) {
  return {Matrix(d_ff, d_model), Matrix(1, d_ff), Matrix(d_model, d_ff), Matrix(1, d_model)};
}

void FFNWeights::validate() const {
  const std::size_t dm = d_model(), df = d_ff();
  if (b_in.rows() != 1 || b_in.cols() != df || w_out.rows() != dm || w_out.cols() != df ||
      b_out.rows() != 1 || b_out.cols() != dm) {
    throw ShapeError("FFN weights inconsistent: W_i " + shape_string(w_in) + ", b_i " + shape_string(b_in) +
                     ", W_o " + shape_string(w_out) + ", b_o " + shape_string(b_out));
  }
}

FFNForward ffn_forward(const FFNWeights& w, const Matrix& x) {
  w.validate();
  if (x.cols() != w.d_model()) {
    throw ShapeError("ffn_forward: input " + shape_string(x) + " for d_model " + std::to_string(w.d_model()));
  }
  FFNForward f;
  f.pre = matmul_nt(x, w.w_in);
  add_row_inplace(f.pre, w.b_in);
  f.hidden = relu(f.pre);
  f.y = matmul_nt(f.hidden, w.w_out);
  add_row_inplace(f.y, w.b_out);
  return f;
}

FFNBackward ffn_backward(const FFNWeights& w, const Matrix& x, const FFNForward& fwd, const Matrix& d_y) {
  if (d_y.rows() != x.rows() || d_y.cols() != w.d_model()) throw ShapeError("ffn_backward: gradient shape");
  FFNBackward b{FFNWeights::zeros(w.d_model(), w.d_ff()), Matrix()};
  b.grads.w_out = matmul_tn(d_y, fwd.hidden);
  accumulate_column_sums(b.grads.b_out, d_y);
  const Matrix d_hidden = matmul(d_y, w.w_out);
  const Matrix d_pre = relu_backward(d_hidden, fwd.pre);
  b.grads.w_in = matmul_tn(d_pre, x);
  accumulate_column_sums(b.grads.b_in, d_pre);
  b.d_x = matmul(d_pre, w.w_in);
  return b;
}

}  // namespace ssdlab
