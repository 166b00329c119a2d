// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssdlab/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ssdlab/ops.hpp"

namespace ssdlab {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 32;
  c.n_heads = 4;
  c.d_ff = 192;
  c.vocab_size = 256;
  c.max_seq_len = 32;
  return c;
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.n_layers = 12;
  c.d_model = 768;
  c.n_heads = 12;
  c.d_ff = 6144;
  c.vocab_size = 50257;
  c.max_seq_len = 512;
  return c;
}

void ModelConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0 || max_seq_len == 0) {
    throw std::invalid_argument("model config: every dimension must be positive");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("model config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                                std::to_string(n_heads));
  }
  if (!(ln_eps > 0.0)) throw std::invalid_argument("model config: ln_eps must be positive");
}

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double std, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = std * rng.normal();
  return m;
}

template <typename Fn>
void visit_parameters(auto& model, Fn&& fn) {
  fn(model.tok_emb);
  fn(model.pos_emb);
  for (auto& b : model.blocks) {
    fn(b.ln1_gain);
    fn(b.ln1_bias);
    fn(b.attn.wq);
    fn(b.attn.bq);
    fn(b.attn.wk);
    fn(b.attn.bk);
    fn(b.attn.wv);
    fn(b.attn.bv);
    fn(b.attn.wo);
    fn(b.attn.bo);
    fn(b.ln2_gain);
    fn(b.ln2_bias);
    if (auto* dense = std::get_if<FFNWeights>(&b.ffn)) {
      fn(dense->w_in);
      fn(dense->b_in);
      fn(dense->w_out);
      fn(dense->b_out);
    } else {
      auto& sparse = std::get<SMoEFFN>(b.ffn);
      for (auto& e : sparse.experts) {
        fn(e.w_in);
        fn(e.b_in);
        fn(e.w_out);
      }
      fn(sparse.b_out);
    }
  }
  fn(model.lnf_gain);
  fn(model.lnf_bias);
  fn(model.head_w);
  fn(model.head_b);
}

}  // namespace

Model Model::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  const double s = cfg.init_std;
  Model m;
  m.config = cfg;
  m.tok_emb = gaussian(cfg.vocab_size, d, s, rng);
  m.pos_emb = gaussian(cfg.max_seq_len, d, s, rng);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    TransformerBlock b;
    b.ln1_gain = Matrix(1, d, 1.0);
    b.ln1_bias = Matrix(1, d);
    b.attn.wq = gaussian(d, d, s, rng);
    b.attn.bq = Matrix(1, d);
    b.attn.wk = gaussian(d, d, s, rng);
    b.attn.bk = Matrix(1, d);
    b.attn.wv = gaussian(d, d, s, rng);
    b.attn.bv = Matrix(1, d);
    b.attn.wo = gaussian(d, d, s, rng);
    b.attn.bo = Matrix(1, d);
    b.ln2_gain = Matrix(1, d, 1.0);
    b.ln2_bias = Matrix(1, d);
    FFNWeights f = FFNWeights::zeros(d, cfg.d_ff);
    f.w_in = gaussian(cfg.d_ff, d, s, rng);
    f.w_out = gaussian(d, cfg.d_ff, s, rng);
    b.ffn = std::move(f);
    m.blocks.push_back(std::move(b));
  }
  m.lnf_gain = Matrix(1, d, 1.0);
  m.lnf_bias = Matrix(1, d);
  m.head_w = gaussian(cfg.vocab_size, d, s, rng);
  m.head_b = Matrix(1, cfg.vocab_size);
  return m;
}

Model Model::zeros_like() const {
  Model z = *this;
  visit_parameters(z, [](Matrix& p) { p.fill(0.0); });
  return z;
}

std::vector<Matrix*> Model::parameters() {
  std::vector<Matrix*> out;
  visit_parameters(*this, [&](Matrix& p) { out.push_back(&p); });
  return out;
}

std::vector<const Matrix*> Model::parameters() const {
  std::vector<const Matrix*> out;
  visit_parameters(*this, [&](const Matrix& p) { out.push_back(&p); });
  return out;
}

std::vector<Matrix> Model::parameter_values() const {
  std::vector<Matrix> out;
  visit_parameters(*this, [&](const Matrix& p) { out.push_back(p); });
  return out;
}

void Model::assign_parameters(const std::vector<Matrix>& values) {
  auto slots = parameters();
  if (slots.size() != values.size()) {
    throw ShapeError("assign_parameters: " + std::to_string(values.size()) + " tensors for " +
                     std::to_string(slots.size()) + " slots");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i]->same_shape(values[i])) {
      throw ShapeError("assign_parameters: tensor " + std::to_string(i) + " is " + shape_string(values[i]) +
                       ", slot is " + shape_string(*slots[i]));
    }
    *slots[i] = values[i];
  }
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  visit_parameters(*this, [&](const Matrix& p) { n += p.size(); });
  return n;
}

bool Model::any_sparse() const {
  for (const auto& b : blocks) {
    if (b.is_sparse()) return true;
  }
  return false;
}

namespace {

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = matmul_nt(x, w);
  add_row_inplace(y, b);
  return y;
}

// Accumulates dW, db; returns dx.
Matrix linear_backward(const Matrix& d_y, const Matrix& x, const Matrix& w, Matrix& d_w, Matrix& d_b) {
  add_inplace(d_w, matmul_tn(d_y, x));
  accumulate_column_sums(d_b, d_y);
  return matmul(d_y, w);
}

struct AttentionCache {
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per (sequence, head), seq_len × seq_len, zero above the diagonal
  Matrix ctx;
};

Matrix causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t batch, std::size_t seq_len,
                        std::size_t n_heads, std::vector<Matrix>* probs_out) {
  const std::size_t d = q.cols(), hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix ctx(q.rows(), d);
  if (probs_out != nullptr) probs_out->clear();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      Matrix p(seq_len, seq_len);
      const std::size_t off = h * hd;
      for (std::size_t t = 0; t < seq_len; ++t) {
        const std::size_t qi = b * seq_len + t;
        double mx = -INFINITY;
        for (std::size_t s = 0; s <= t; ++s) {
          const std::size_t ki = b * seq_len + s;
          double acc = 0.0;
          for (std::size_t j = 0; j < hd; ++j) acc += q(qi, off + j) * k(ki, off + j);
          p(t, s) = acc * scale;
          if (p(t, s) > mx) mx = p(t, s);
        }
        double sum = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          p(t, s) = std::exp(p(t, s) - mx);
          sum += p(t, s);
        }
        for (std::size_t s = 0; s <= t; ++s) {
          p(t, s) /= sum;
          const std::size_t vi = b * seq_len + s;
          for (std::size_t j = 0; j < hd; ++j) ctx(qi, off + j) += p(t, s) * v(vi, off + j);
        }
      }
      if (probs_out != nullptr) probs_out->push_back(std::move(p));
    }
  }
  return ctx;
}

struct BlockCache {
  Matrix x_in;
  LayerNormCache ln1;
  Matrix a;
  AttentionCache attn;
  Matrix x_mid;
  LayerNormCache ln2;
  Matrix c;
  std::variant<FFNForward, SMoEForward> ffn;
};

Matrix run_block(const TransformerBlock& blk, const ModelConfig& cfg, const Matrix& x, std::size_t batch,
                 std::size_t seq_len, const SparseEvalOptions& sparse, BlockCache* cache) {
  BlockCache local;
  BlockCache& bc = cache != nullptr ? *cache : local;
  const bool keep = cache != nullptr;
  if (keep) bc.x_in = x;

  bc.a = layernorm(x, blk.ln1_gain, blk.ln1_bias, cfg.ln_eps, keep ? &bc.ln1 : nullptr);
  bc.attn.q = linear(bc.a, blk.attn.wq, blk.attn.bq);
  bc.attn.k = linear(bc.a, blk.attn.wk, blk.attn.bk);
  bc.attn.v = linear(bc.a, blk.attn.wv, blk.attn.bv);
  bc.attn.ctx = causal_attention(bc.attn.q, bc.attn.k, bc.attn.v, batch, seq_len, cfg.n_heads,
                                 keep ? &bc.attn.probs : nullptr);
  Matrix x_mid = linear(bc.attn.ctx, blk.attn.wo, blk.attn.bo);
  add_inplace(x_mid, x);

  bc.c = layernorm(x_mid, blk.ln2_gain, blk.ln2_bias, cfg.ln_eps, keep ? &bc.ln2 : nullptr);
  Matrix y;
  if (const auto* dense = std::get_if<FFNWeights>(&blk.ffn)) {
    FFNForward f = ffn_forward(*dense, bc.c);
    y = f.y;
    bc.ffn = std::move(f);
  } else {
    const auto& moe = std::get<SMoEFFN>(blk.ffn);
    SMoEForward f;
    if (sparse.top_k.has_value() || sparse.dynamic_ratio > 0.0) {
      auto decisions = gate_batch(moe, bc.c, sparse.top_k.value_or(moe.top_k));
      if (sparse.dynamic_ratio > 0.0) decisions = dynamic_topk(decisions, sparse.dynamic_ratio);
      f = smoe_forward(moe, bc.c, std::move(decisions));
    } else {
      f = smoe_forward(moe, bc.c);
    }
    y = f.y;
    bc.ffn = std::move(f);
  }
  add_inplace(y, x_mid);
  if (keep) bc.x_mid = std::move(x_mid);
  return y;
}

// Returns d_x; accumulates parameter gradients into `g`.
Matrix backward_block(const TransformerBlock& blk, TransformerBlock& g, const ModelConfig& cfg, const BlockCache& bc,
                      const Matrix& d_y, std::size_t batch, std::size_t seq_len) {
  // FFN sublayer.
  Matrix d_c;
  if (const auto* dense = std::get_if<FFNWeights>(&blk.ffn)) {
    FFNBackward fb = ffn_backward(*dense, bc.c, std::get<FFNForward>(bc.ffn), d_y);
    auto& gd = std::get<FFNWeights>(g.ffn);
    add_inplace(gd.w_in, fb.grads.w_in);
    add_inplace(gd.b_in, fb.grads.b_in);
    add_inplace(gd.w_out, fb.grads.w_out);
    add_inplace(gd.b_out, fb.grads.b_out);
    d_c = std::move(fb.d_x);
  } else {
    const auto& moe = std::get<SMoEFFN>(blk.ffn);
    SMoEBackward sb = smoe_backward(moe, bc.c, std::get<SMoEForward>(bc.ffn), d_y);
    auto& gs = std::get<SMoEFFN>(g.ffn);
    for (std::size_t e = 0; e < sb.experts.size(); ++e) {
      add_inplace(gs.experts[e].w_in, sb.experts[e].w_in);
      add_inplace(gs.experts[e].b_in, sb.experts[e].b_in);
      add_inplace(gs.experts[e].w_out, sb.experts[e].w_out);
    }
    add_inplace(gs.b_out, sb.b_out);
    d_c = std::move(sb.d_x);
  }
  LayerNormGrads ln2 = layernorm_backward(d_c, blk.ln2_gain, bc.ln2);
  add_inplace(g.ln2_gain, ln2.d_gain);
  add_inplace(g.ln2_bias, ln2.d_bias);
  Matrix d_mid = d_y;
  add_inplace(d_mid, ln2.d_x);

  // Attention sublayer.
  const Matrix d_ctx = linear_backward(d_mid, bc.attn.ctx, blk.attn.wo, g.attn.wo, g.attn.bo);
  const std::size_t d = cfg.d_model, nh = cfg.n_heads, hd = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Matrix& q = bc.attn.q;
  const Matrix& k = bc.attn.k;
  const Matrix& v = bc.attn.v;
  Matrix d_q(q.rows(), d), d_k(k.rows(), d), d_v(v.rows(), d);
  std::vector<double> d_p(seq_len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < nh; ++h) {
      const Matrix& p = bc.attn.probs[b * nh + h];
      const std::size_t off = h * hd;
      for (std::size_t t = 0; t < seq_len; ++t) {
        const std::size_t qi = b * seq_len + t;
        double weighted = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          const std::size_t vi = b * seq_len + s;
          double acc = 0.0;
          for (std::size_t j = 0; j < hd; ++j) {
            acc += d_ctx(qi, off + j) * v(vi, off + j);
            d_v(vi, off + j) += p(t, s) * d_ctx(qi, off + j);
          }
          d_p[s] = acc;
          weighted += acc * p(t, s);
        }
        for (std::size_t s = 0; s <= t; ++s) {
          const double d_score = p(t, s) * (d_p[s] - weighted) * scale;
          const std::size_t ki = b * seq_len + s;
          for (std::size_t j = 0; j < hd; ++j) {
            d_q(qi, off + j) += d_score * k(ki, off + j);
            d_k(ki, off + j) += d_score * q(qi, off + j);
          }
        }
      }
    }
  }
  Matrix d_a = linear_backward(d_q, bc.a, blk.attn.wq, g.attn.wq, g.attn.bq);
  add_inplace(d_a, linear_backward(d_k, bc.a, blk.attn.wk, g.attn.wk, g.attn.bk));
  add_inplace(d_a, linear_backward(d_v, bc.a, blk.attn.wv, g.attn.wv, g.attn.bv));
  LayerNormGrads ln1 = layernorm_backward(d_a, blk.ln1_gain, bc.ln1);
  add_inplace(g.ln1_gain, ln1.d_gain);
  add_inplace(g.ln1_bias, ln1.d_bias);
  add_inplace(d_mid, ln1.d_x);
  return d_mid;
}

void check_ids(const Model& model, std::span<const std::int32_t> ids) {
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= model.config.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(model.config.vocab_size));
    }
  }
}

Matrix embed(const Model& model, const TokenBatch& batch, std::size_t seq_len) {
  const std::size_t d = model.config.d_model;
  Matrix x(batch.batch * seq_len, d);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t t = 0; t < seq_len; ++t) {
      const auto id = static_cast<std::size_t>(batch.ids[b * batch.length + t]);
      auto dst = x.row(b * seq_len + t);
      auto te = model.tok_emb.row(id);
      auto pe = model.pos_emb.row(t);
      for (std::size_t j = 0; j < d; ++j) dst[j] = te[j] + pe[j];
    }
  }
  return x;
}

void check_batch(const Model& model, const TokenBatch& batch, std::size_t seq_len) {
  if (batch.ids.size() != batch.batch * batch.length) throw ShapeError("token batch: id count does not match shape");
  if (seq_len > model.config.max_seq_len) {
    throw std::invalid_argument("sequence of " + std::to_string(seq_len) + " inputs exceeds max_seq_len " +
                                std::to_string(model.config.max_seq_len));
  }
  check_ids(model, batch.ids);
}

}  // namespace

Matrix block_forward(const TransformerBlock& block, const ModelConfig& cfg, const Matrix& x, std::size_t batch,
                     std::size_t seq_len) {
  if (seq_len > cfg.max_seq_len) {
    throw std::invalid_argument("sequence of " + std::to_string(seq_len) + " exceeds max_seq_len " +
                                std::to_string(cfg.max_seq_len));
  }
  if (x.rows() != batch * seq_len || x.cols() != cfg.d_model) throw ShapeError("block_forward: input shape");
  return run_block(block, cfg, x, batch, seq_len, {}, nullptr);
}

Matrix forward_logits(const Model& model, const TokenBatch& inputs, const SparseEvalOptions& sparse) {
  const std::size_t seq_len = inputs.length;
  check_batch(model, inputs, seq_len);
  Matrix x = embed(model, inputs, seq_len);
  for (const auto& blk : model.blocks) x = run_block(blk, model.config, x, inputs.batch, seq_len, sparse, nullptr);
  const Matrix f = layernorm(x, model.lnf_gain, model.lnf_bias, model.config.ln_eps);
  return linear(f, model.head_w, model.head_b);
}

LossResult lm_loss(const Model& model, const TokenBatch& batch, const LossOptions& options) {
  if (batch.length < 2) throw std::invalid_argument("lm_loss: sequences need at least two tokens");
  const std::size_t seq_len = batch.length - 1;
  check_batch(model, batch, seq_len);
  const ModelConfig& cfg = model.config;

  std::vector<std::int32_t> targets;
  targets.reserve(batch.batch * seq_len);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t t = 1; t < batch.length; ++t) targets.push_back(batch.ids[b * batch.length + t]);
  }

  const bool grad = options.compute_gradients;
  std::vector<BlockCache> caches(grad ? model.blocks.size() : 0);
  LossResult res;
  Matrix x = embed(model, batch, seq_len);
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    BlockCache local;
    BlockCache* bc = grad ? &caches[l] : (options.capture_hidden ? &local : nullptr);
    x = run_block(model.blocks[l], cfg, x, batch.batch, seq_len, options.sparse, bc);
    if (options.capture_hidden) {
      if (const auto* f = std::get_if<FFNForward>(&bc->ffn)) {
        res.hidden.push_back(f->hidden);
      } else {
        res.hidden.push_back(std::get<SMoEForward>(bc->ffn).hidden);
      }
    }
  }
  LayerNormCache lnf;
  const Matrix f = layernorm(x, model.lnf_gain, model.lnf_bias, cfg.ln_eps, grad ? &lnf : nullptr);
  const Matrix logits = linear(f, model.head_w, model.head_b);
  CrossEntropyResult ce = softmax_cross_entropy(logits, targets);
  res.loss = ce.loss;
  if (!grad) return res;

  res.grads = model.zeros_like();
  Model& g = res.grads;
  const Matrix d_f = linear_backward(ce.d_logits, f, model.head_w, g.head_w, g.head_b);
  LayerNormGrads lg = layernorm_backward(d_f, model.lnf_gain, lnf);
  add_inplace(g.lnf_gain, lg.d_gain);
  add_inplace(g.lnf_bias, lg.d_bias);
  Matrix d_x = std::move(lg.d_x);
  for (std::size_t l = model.blocks.size(); l-- > 0;) {
    d_x = backward_block(model.blocks[l], g.blocks[l], cfg, caches[l], d_x, batch.batch, seq_len);
  }
  const std::size_t d = cfg.d_model;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t t = 0; t < seq_len; ++t) {
      const auto id = static_cast<std::size_t>(batch.ids[b * batch.length + t]);
      auto src = d_x.row(b * seq_len + t);
      auto te = g.tok_emb.row(id);
      auto pe = g.pos_emb.row(t);
      for (std::size_t j = 0; j < d; ++j) {
        te[j] += src[j];
        pe[j] += src[j];
      }
    }
  }
  return res;
}

}  // namespace ssdlab
