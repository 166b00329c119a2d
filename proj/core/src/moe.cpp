// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssdlab/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>

namespace ssdlab {

namespace {

struct Slot {
  std::size_t expert;
  std::size_t row;
};

// Dense neuron index -> (expert, row).
std::vector<Slot> neuron_slots(const SMoEFFN& m) {
  std::vector<Slot> slots(m.d_ff());
  for (std::size_t n = 0; n < m.neurons.size(); ++n) {
    for (std::size_t r = 0; r < m.neurons[n].size(); ++r) slots[m.neurons[n][r]] = {n, r};
  }
  return slots;
}

}  // namespace

void SMoEFFN::validate() const {
  const std::size_t n = n_experts();
  if (n == 0) throw std::invalid_argument("SMoE block has no experts");
  if (top_k < 1 || top_k > n) {
    throw std::invalid_argument("top_k " + std::to_string(top_k) + " outside [1, " + std::to_string(n) + "]");
  }
  const std::size_t g = group_size(), dm = d_model();
  for (const Expert& e : experts) {
    if (e.w_in.rows() != g || e.w_in.cols() != dm || e.b_in.rows() != 1 || e.b_in.cols() != g ||
        e.w_out.rows() != dm || e.w_out.cols() != g) {
      throw ShapeError("expert shapes inconsistent");
    }
  }
  if (neurons.size() != n || partition.n_clusters != n || partition.size() != n * g) {
    throw std::invalid_argument("expert row-order record does not match the expert layout");
  }
  std::vector<bool> seen(n * g, false);
  for (std::size_t e = 0; e < n; ++e) {
    if (neurons[e].size() != g) throw std::invalid_argument("expert row-order record has wrong length");
    for (std::size_t idx : neurons[e]) {
      if (idx >= n * g || seen[idx] || partition.assignment[idx] != e) {
        throw std::invalid_argument("corrupted expert row-order record");
      }
      seen[idx] = true;
    }
  }
}

bool GateDecision::is_selected(std::size_t expert) const {
  return std::find(selected.begin(), selected.end(), expert) != selected.end();
}

SMoEFFN split_ffn(const FFNWeights& w, const Partition& p, std::size_t top_k) {
  w.validate();
  if (p.size() != w.d_ff()) {
    throw ShapeError("split_ffn: partition covers " + std::to_string(p.size()) + " neurons, d_ff is " +
                     std::to_string(w.d_ff()));
  }
  p.require_balanced();
  const std::size_t dm = w.d_model();
  SMoEFFN m;
  m.top_k = top_k;
  m.partition = p;
  m.neurons = p.members();
  m.b_out = w.b_out;
  m.experts.reserve(p.n_clusters);
  for (const auto& rows : m.neurons) {
    const std::size_t g = rows.size();
    Expert e{Matrix(g, dm), Matrix(1, g), Matrix(dm, g)};
    for (std::size_t r = 0; r < g; ++r) {
      const std::size_t src = rows[r];
      auto from = w.w_in.row(src);
      std::copy(from.begin(), from.end(), e.w_in.row(r).begin());
      e.b_in[r] = w.b_in[src];
      for (std::size_t j = 0; j < dm; ++j) e.w_out(j, r) = w.w_out(j, src);
    }
    m.experts.push_back(std::move(e));
  }
  m.validate();
  return m;
}

FFNWeights merge_experts(const SMoEFFN& m) {
  m.validate();
  const std::size_t dm = m.d_model();
  FFNWeights w = FFNWeights::zeros(dm, m.d_ff());
  w.b_out = m.b_out;
  for (std::size_t n = 0; n < m.n_experts(); ++n) {
    const Expert& e = m.experts[n];
    for (std::size_t r = 0; r < m.neurons[n].size(); ++r) {
      const std::size_t dst = m.neurons[n][r];
      auto from = e.w_in.row(r);
      std::copy(from.begin(), from.end(), w.w_in.row(dst).begin());
      w.b_in[dst] = e.b_in[r];
      for (std::size_t j = 0; j < dm; ++j) w.w_out(j, dst) = e.w_out(j, r);
    }
  }
  return w;
}

Matrix compute_centroids(const SMoEFFN& m) {
  const std::size_t n = m.n_experts();
  Matrix c(n, m.d_model());
  if (n == 0) return c;
  const double scale = static_cast<double>(n) / static_cast<double>(m.d_ff());
  for (std::size_t e = 0; e < n; ++e) {
    auto dst = c.row(e);
    const Matrix& w = m.experts[e].w_in;
    for (std::size_t r = 0; r < w.rows(); ++r) {
      auto src = w.row(r);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    for (double& v : dst) v *= scale;
  }
  return c;
}

GateDecision gate(const Matrix& centroids, std::span<const double> x, std::size_t top_k) {
  const std::size_t n = centroids.rows();
  if (x.size() != centroids.cols()) throw ShapeError("gate: token length does not match d_model");
  if (top_k < 1 || top_k > n) throw std::invalid_argument("gate: top_k outside [1, N]");
  GateDecision d;
  d.scores.resize(n);
  for (std::size_t e = 0; e < n; ++e) d.scores[e] = dot(centroids.row(e), x);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top_k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (d.scores[a] != d.scores[b]) return d.scores[a] > d.scores[b];
                      return a < b;
                    });
  d.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top_k));
  return d;
}

GateDecision gate(const SMoEFFN& m, std::span<const double> x) { return gate(compute_centroids(m), x, m.top_k); }

std::vector<GateDecision> gate_batch(const SMoEFFN& m, const Matrix& x, std::size_t top_k) {
  const Matrix c = compute_centroids(m);
  std::vector<GateDecision> out;
  out.reserve(x.rows());
  for (std::size_t t = 0; t < x.rows(); ++t) out.push_back(gate(c, x.row(t), top_k));
  return out;
}

std::vector<GateDecision> dynamic_topk(const std::vector<GateDecision>& decisions, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("dynamic_topk: ratio must lie in [0, 1)");
  // (score, token, expert), ranked by score descending then token, expert ascending.
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t t = 0; t < decisions.size(); ++t) {
    for (std::size_t e : decisions[t].selected) pairs.emplace_back(decisions[t].scores[e], t, e);
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  // The small slack keeps e.g. (1 - 0.7) * 10 = 3.0000000000000004 from rounding up to 4.
  const double exact = (1.0 - ratio) * static_cast<double>(pairs.size());
  const auto keep = std::min(pairs.size(), static_cast<std::size_t>(std::ceil(exact - 1e-9)));

  std::vector<std::vector<bool>> kept(decisions.size());
  for (std::size_t t = 0; t < decisions.size(); ++t) kept[t].assign(decisions[t].scores.size(), false);
  for (std::size_t i = 0; i < keep; ++i) kept[std::get<1>(pairs[i])][std::get<2>(pairs[i])] = true;

  std::vector<GateDecision> out(decisions.size());
  for (std::size_t t = 0; t < decisions.size(); ++t) {
    out[t].scores = decisions[t].scores;
    if (!decisions[t].selected.empty()) kept[t][decisions[t].selected.front()] = true;
    for (std::size_t e : decisions[t].selected) {
      if (kept[t][e]) out[t].selected.push_back(e);
    }
  }
  return out;
}

SMoEForward smoe_forward(const SMoEFFN& m, const Matrix& x) {
  return smoe_forward(m, x, gate_batch(m, x, m.top_k));
}

SMoEForward smoe_forward(const SMoEFFN& m, const Matrix& x, std::vector<GateDecision> decisions) {
  m.validate();
  const std::size_t dm = m.d_model(), d_ff = m.d_ff(), tokens = x.rows();
  if (x.cols() != dm) throw ShapeError("smoe_forward: input " + shape_string(x) + " for d_model " + std::to_string(dm));
  if (decisions.size() != tokens) throw ShapeError("smoe_forward: one gate decision per token required");

  SMoEForward f;
  f.centroids = compute_centroids(m);
  f.decisions = std::move(decisions);
  f.y = Matrix(tokens, dm);
  f.pre = Matrix(tokens, d_ff);
  f.hidden = Matrix(tokens, d_ff);
  const std::vector<Slot> slots = neuron_slots(m);
  std::vector<char> active(m.n_experts());

  for (std::size_t t = 0; t < tokens; ++t) {
    const auto xt = x.row(t);
    std::fill(active.begin(), active.end(), 0);
    for (std::size_t e : f.decisions[t].selected) {
      if (e >= m.n_experts()) throw std::invalid_argument("smoe_forward: selected expert out of range");
      active[e] = 1;
      const Expert& ex = m.experts[e];
      for (std::size_t r = 0; r < ex.w_in.rows(); ++r) {
        const std::size_t idx = m.neurons[e][r];
        const double pre = dot(ex.w_in.row(r), xt) + ex.b_in[r];
        f.pre(t, idx) = pre;
        f.hidden(t, idx) = pre > 0.0 ? pre : 0.0;
      }
    }
    // Accumulate in dense neuron order so that K = N reproduces the dense
    // product bit for bit. Selected coefficients are exactly 1.
    auto yt = f.y.row(t);
    for (std::size_t idx = 0; idx < d_ff; ++idx) {
      const Slot s = slots[idx];
      if (!active[s.expert]) continue;
      const double h = f.hidden(t, idx);
      const Matrix& wo = m.experts[s.expert].w_out;
      for (std::size_t j = 0; j < dm; ++j) yt[j] += h * wo(j, s.row);
    }
    for (std::size_t j = 0; j < dm; ++j) yt[j] += m.b_out[j];
  }
  return f;
}

SMoEBackward smoe_backward(const SMoEFFN& m, const Matrix& x, const SMoEForward& fwd, const Matrix& d_y) {
  const std::size_t dm = m.d_model(), tokens = x.rows(), n = m.n_experts();
  if (d_y.rows() != tokens || d_y.cols() != dm) throw ShapeError("smoe_backward: gradient shape");
  SMoEBackward b;
  b.experts.reserve(n);
  for (const Expert& e : m.experts) {
    b.experts.push_back({Matrix(e.w_in.rows(), e.w_in.cols()), Matrix(1, e.b_in.cols()),
                         Matrix(e.w_out.rows(), e.w_out.cols())});
  }
  b.b_out = Matrix(1, dm);
  b.d_x = Matrix(tokens, dm);
  Matrix d_centroids(n, dm);
  std::vector<bool> touched(n, false);

  for (std::size_t t = 0; t < tokens; ++t) {
    const auto xt = x.row(t);
    const auto dyt = d_y.row(t);
    auto dxt = b.d_x.row(t);
    for (std::size_t j = 0; j < dm; ++j) b.b_out[j] += dyt[j];
    for (std::size_t e : fwd.decisions[t].selected) {
      touched[e] = true;
      const Expert& ex = m.experts[e];
      Expert& gx = b.experts[e];
      double d_score = 0.0;
      for (std::size_t r = 0; r < ex.w_in.rows(); ++r) {
        const std::size_t idx = m.neurons[e][r];
        const double h = fwd.hidden(t, idx);
        double d_h = 0.0;
        for (std::size_t j = 0; j < dm; ++j) {
          d_h += dyt[j] * ex.w_out(j, r);
          gx.w_out(j, r) += dyt[j] * h;
        }
        // dy·(W_o,n h_n) = Σ_r h_r (W_o,nᵀ dy)_r
        d_score += h * d_h;
        if (fwd.pre(t, idx) > 0.0) {
          auto gw = gx.w_in.row(r);
          auto w = ex.w_in.row(r);
          for (std::size_t j = 0; j < dm; ++j) {
            gw[j] += d_h * xt[j];
            dxt[j] += d_h * w[j];
          }
          gx.b_in[r] += d_h;
        }
      }
      auto c = fwd.centroids.row(e);
      auto dc = d_centroids.row(e);
      for (std::size_t j = 0; j < dm; ++j) {
        dxt[j] += d_score * c[j];
        dc[j] += d_score * xt[j];
      }
    }
  }

  const double scale = static_cast<double>(n) / static_cast<double>(m.d_ff());
  for (std::size_t e = 0; e < n; ++e) {
    if (!touched[e]) continue;
    auto dc = d_centroids.row(e);
    Matrix& gw = b.experts[e].w_in;
    for (std::size_t r = 0; r < gw.rows(); ++r) {
      auto row = gw.row(r);
      for (std::size_t j = 0; j < dm; ++j) row[j] += scale * dc[j];
    }
  }
  return b;
}

}  // namespace ssdlab
