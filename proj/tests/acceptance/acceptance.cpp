// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

// Runs the twelve acceptance criteria and prints one PASS/FAIL line for each.
// Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "ssdlab/analysis.hpp"
#include "ssdlab/checkpoint.hpp"
#include "ssdlab/clustering.hpp"
#include "ssdlab/corpus.hpp"
#include "ssdlab/ffn.hpp"
#include "ssdlab/flops.hpp"
#include "ssdlab/moe.hpp"
#include "ssdlab/scheduler.hpp"
#include "ssdlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace ssdlab;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail << "failed: " << what << "; ";
    pass = pass && ok;
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

FFNWeights random_ffn(std::size_t dm, std::size_t dff, Rng& rng, double scale = 0.5) {
  FFNWeights w;
  w.w_in = oracle::random_matrix(dff, dm, rng, scale);
  w.b_in = oracle::random_matrix(1, dff, rng, 0.1);
  w.w_out = oracle::random_matrix(dm, dff, rng, scale);
  w.b_out = oracle::random_matrix(1, dm, rng, 0.1);
  return w;
}

fs::path work_dir() {
  const fs::path p = fs::temp_directory_path() / "ssdlab_acceptance";
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void k_equals_n(Verdict& v) {
  const auto t0 = Clock::now();
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dm = 2 + rng.index(15), n = 1 + rng.index(8), g = 1 + rng.index(8);
    const FFNWeights w = random_ffn(dm, n * g, rng);
    const SMoEFFN m = split_ffn(w, Partition::random_balanced(n * g, n, rng), n);
    const Matrix x = oracle::random_matrix(1 + rng.index(16), dm, rng);
    v.require(smoe_forward(m, x).y == ffn_forward(w, x).y, "trial " + std::to_string(trial) + " differs");
  }
  const double secs = seconds_since(t0);
  v.require(secs < 10.0, "runtime");
  v.detail << "100 triples bitwise equal in " << secs << " s";
}

void split_merge(Verdict& v) {
  const auto t0 = Clock::now();
  Rng rng(202);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dm = 2 + rng.index(15), n = 1 + rng.index(8), g = 1 + rng.index(8);
    const FFNWeights w = random_ffn(dm, n * g, rng);
    const FFNWeights back = merge_experts(split_ffn(w, Partition::random_balanced(n * g, n, rng), 1));
    v.require(back == w, "parameters not recovered");
    const Matrix x = oracle::random_matrix(1 + rng.index(16), dm, rng);
    v.require(ffn_forward(back, x).y == ffn_forward(w, x).y, "outputs differ");
  }
  const double secs = seconds_since(t0);
  v.require(secs < 10.0, "runtime");
  v.detail << "100 round trips bitwise in " << secs << " s";
}

void zero_gradient(Verdict& v) {
  Rng rng(303);
  std::size_t zeros = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t dm = 4 + rng.index(5), n = 4, g = 2 + rng.index(5), k = 1 + rng.index(3);
    FFNWeights w = random_ffn(dm, n * g, rng);
    const Partition p = Partition::random_balanced(n * g, n, rng);
    const std::size_t banned = rng.index(n);
    // Pull the banned expert's centroid to -3u and feed tokens near +5u.
    std::vector<double> u(dm);
    double norm = 0.0;
    for (double& a : u) {
      a = rng.normal();
      norm += a * a;
    }
    for (double& a : u) a /= std::sqrt(norm);
    const auto rows = p.members()[banned];
    for (std::size_t j = 0; j < dm; ++j) {
      double mean = 0.0;
      for (std::size_t r : rows) mean += w.w_in(r, j);
      mean /= static_cast<double>(rows.size());
      for (std::size_t r : rows) w.w_in(r, j) += -mean - 3.0 * u[j];
    }
    const SMoEFFN m = split_ffn(w, p, k);
    Matrix x(8, dm);
    for (std::size_t t = 0; t < 8; ++t) {
      for (std::size_t j = 0; j < dm; ++j) x(t, j) = 5.0 * u[j] + 0.1 * rng.normal();
    }
    const auto f = smoe_forward(m, x);
    bool chosen = false;
    for (const auto& d : f.decisions) chosen = chosen || d.is_selected(banned);
    v.require(!chosen, "engineered batch selected the banned expert");
    const auto g_out = smoe_backward(m, x, f, oracle::random_matrix(8, dm, rng));
    const Expert& ge = g_out.experts[banned];
    for (const Matrix* t : {&ge.w_in, &ge.b_in, &ge.w_out}) {
      for (double a : t->values()) {
        v.require(a == 0.0, "nonzero gradient on an unselected expert");
        ++zeros;
      }
    }
  }
  v.detail << "50 trials, " << zeros << " gradient entries exactly 0";
}

double model_fd_error(Model model, const TokenBatch& batch, std::size_t first, std::size_t last) {
  const LossResult res = lm_loss(model, batch);
  auto params = model.parameters();
  const auto grads = std::as_const(res.grads).parameters();
  double worst = 0.0;
  for (std::size_t i = first; i < last; ++i) {
    auto f = [&] { return lm_loss(model, batch, {false, false, {}}).loss; };
    worst = std::max(worst, oracle::relative_error(*grads[i], oracle::numeric_gradient(*params[i], f)));
  }
  return worst;
}

void gradient_fidelity(Verdict& v) {
  Rng rng(404);
  // FFN.
  FFNWeights w = random_ffn(5, 12, rng);
  Matrix x = oracle::random_matrix(6, 5, rng);
  const Matrix d_y = oracle::random_matrix(6, 5, rng);
  const auto fb = ffn_backward(w, x, ffn_forward(w, x), d_y);
  auto ffn_loss = [&] {
    const Matrix y = ffn_forward(w, x).y;
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * d_y[i];
    return s;
  };
  double ffn_err = oracle::relative_error(fb.d_x, oracle::numeric_gradient(x, ffn_loss));
  ffn_err = std::max(ffn_err, oracle::relative_error(fb.grads.w_in, oracle::numeric_gradient(w.w_in, ffn_loss)));
  ffn_err = std::max(ffn_err, oracle::relative_error(fb.grads.b_in, oracle::numeric_gradient(w.b_in, ffn_loss)));
  ffn_err = std::max(ffn_err, oracle::relative_error(fb.grads.w_out, oracle::numeric_gradient(w.w_out, ffn_loss)));
  ffn_err = std::max(ffn_err, oracle::relative_error(fb.grads.b_out, oracle::numeric_gradient(w.b_out, ffn_loss)));
  v.require(ffn_err < 1e-4, "FFN");

  // SMoE layer in a region where no small perturbation changes the routing.
  double smoe_err = 0.0;
  for (int found = 0; found < 3;) {
    SMoEFFN m = split_ffn(random_ffn(4, 16, rng), Partition::random_balanced(16, 4, rng), 2);
    Matrix xs = oracle::random_matrix(5, 4, rng);
    const Matrix dys = oracle::random_matrix(5, 4, rng);
    const auto f = smoe_forward(m, xs);
    if (oracle::routing_margin(f.decisions) < 1e-3) continue;
    ++found;
    const auto g = smoe_backward(m, xs, f, dys);
    auto loss = [&] { return oracle::surrogate_smoe_loss(m, xs, dys, f.decisions); };
    smoe_err = std::max(smoe_err, oracle::relative_error(g.d_x, oracle::numeric_gradient(xs, loss)));
    smoe_err = std::max(smoe_err, oracle::relative_error(g.b_out, oracle::numeric_gradient(m.b_out, loss)));
    for (std::size_t e = 0; e < 4; ++e) {
      smoe_err = std::max(smoe_err, oracle::relative_error(g.experts[e].w_in, oracle::numeric_gradient(m.experts[e].w_in, loss)));
      smoe_err = std::max(smoe_err, oracle::relative_error(g.experts[e].b_in, oracle::numeric_gradient(m.experts[e].b_in, loss)));
      smoe_err = std::max(smoe_err, oracle::relative_error(g.experts[e].w_out, oracle::numeric_gradient(m.experts[e].w_out, loss)));
    }
  }
  v.require(smoe_err < 1e-4, "SMoE layer");

  // Attention block and the whole 2-layer model.
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.vocab_size = 11;
  c.max_seq_len = 6;
  c.init_std = 0.3;
  const Model model = Model::init(c, rng);
  TokenBatch batch{2, 6, {}};
  for (int i = 0; i < 12; ++i) batch.ids.push_back(static_cast<std::int32_t>(rng.index(11)));
  const double attn_err = model_fd_error(model, batch, 4, 12);
  const double model_err = model_fd_error(model, batch, 0, model.parameters().size());
  v.require(attn_err < 1e-4, "attention");
  v.require(model_err < 1e-4, "2-layer model");
  v.detail << "max rel. err: ffn " << ffn_err << ", smoe " << smoe_err << ", attention " << attn_err << ", model "
           << model_err;
}

void scheduler_arithmetic(Verdict& v) {
  SSDConfig c;
  c.sparse_ratio = 0.5;
  c.final_dense_ratio = 0.1;
  c.total_steps = 200000;
  const auto t18 = sparse_budget(c, 18000, 18000);
  const auto t6 = sparse_budget(c, 6000, 6000);
  v.require(t18 == 22500, "T(18000)");
  v.require(t6 == 7500, "T(6000)");
  // Full run with a switch at every monitor point.
  SchedulerState st = SchedulerState::start(c, 1);
  Rng rng(5);
  std::uint64_t final_steps = 0, first_final = c.total_steps;
  for (std::uint64_t s = 0; s < c.total_steps; ++s) {
    advance(st, s);
    if (st.phase == Phase::kFinalDense) {
      ++final_steps;
      first_final = std::min(first_final, s);
    }
    if (st.should_monitor()) on_monitor(st, 1.0, s, rng);
  }
  v.require(final_steps == 20000 && first_final == 180000, "final dense window");
  v.detail << "T=" << t18 << " and " << t6 << "; final dense steps " << final_steps << " from step " << first_final;
}

void warm_start_selection(Verdict& v) {
  Rng rng(606);
  std::size_t warm_wins = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(7), g = 2 + rng.index(6);
    const Matrix points = oracle::random_matrix(n * g, 3 + rng.index(6), rng);
    const Partition prev = Partition::random_balanced(n * g, n, rng);
    Rng replay = rng;
    const ClusteringOutcome chosen = cluster_with_warmstart(points, n, prev, rng);
    const ClusteringOutcome random = balanced_kmeans(points, n, std::nullopt, replay);
    const ClusteringOutcome warm = balanced_kmeans(points, n, prev, replay);
    v.require(chosen.wcss == std::min(random.wcss, warm.wcss), "selected WCSS is not the minimum");
    v.require(std::abs(chosen.wcss - oracle::direct_wcss(points, chosen.partition.assignment, n)) < 1e-9,
              "reported WCSS disagrees with a direct sum");
    for (const auto* o : {&chosen, &random, &warm}) {
      for (const auto& members : o->partition.members()) v.require(members.size() == g, "unbalanced outcome");
    }
    warm_wins += chosen.init_kind == InitKind::kWarmStart ? 1 : 0;
  }
  v.detail << "50 instances, warm start chosen " << warm_wins << " times";
}

void ari_oracle(Verdict& v) {
  const std::vector<std::size_t> a{0, 0, 1, 1}, b{0, 1, 0, 1};
  v.require(adjusted_rand_index(a, a) == 1.0, "identical");
  const double hand = adjusted_rand_index(a, b);
  v.require(std::abs(hand + 0.5) <= 1e-12, "[0,0,1,1] vs [0,1,0,1]");
  Rng rng(707);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(63);
    const auto x = oracle::random_labels(n, 1 + rng.index(8), rng);
    const auto y = oracle::random_labels(n, 1 + rng.index(8), rng);
    worst = std::max(worst, std::abs(adjusted_rand_index(x, y) - oracle::pair_counting_ari(x, y)));
  }
  v.require(worst < 1e-12, "pair-counting agreement");
  v.detail << "hand case " << hand << ", max abs. err vs pair counting " << worst;
}

TrainConfig toy_train_config() {
  TrainConfig c;
  c.model = ModelConfig::toy();
  c.mode = TrainMode::kDense;
  c.seed = 1;
  c.steps = 10000;
  c.batch_size = 8;
  c.seq_len = 32;
  c.warmup_steps = 200;
  c.lr_base = 1.0;
  c.validation_interval = 2500;
  c.checkpoint_interval = 10000;
  return c;
}

void sparsity_growth(Verdict& v, const fs::path& work) {
  const auto t0 = Clock::now();
  const TrainConfig c = toy_train_config();
  Rng init_rng(mix64(c.seed ^ 0x1a17));  // the trainer's initialization stream
  const Model fresh = Model::init(c.model, init_rng);
  Rng token_rng(808);
  const TokenBatch probe = random_token_batch(kByteVocabSize, 128, 32, token_rng);  // 128·33 = 4224 activations
  const double initial = mean_of(model_sparsity(fresh, probe));
  v.require(std::abs(initial - 0.5) <= 0.05, "initial sparsity outside 0.5 ± 0.05");

  const TokenizedCorpus corpus = tokenize_text(generate_toy_corpus(400000, 1), {"", 0.1, 32}, 32);
  const TrainResult run = train(c, corpus, work / "sparsity");
  const double trained = mean_of(model_sparsity(run.checkpoint.model, probe));
  v.require(trained - initial >= 0.1, "sparsity increase below 0.1");
  const double secs = seconds_since(t0);
  v.require(secs < 1800.0, "runtime");
  v.detail << "mean sparsity " << initial << " at init, " << trained << " after " << c.steps << " steps ("
           << secs << " s)";
}

void flops_model(Verdict& v) {
  const ModelConfig p = ModelConfig::paper();
  const double fraction = flops_estimate(p, p.max_seq_len, 1, SMoEFlops{6, 32}).ffn_fraction;
  const auto dense = forward_flops_per_sequence(p, p.max_seq_len, DenseFlops{});
  const auto sparse = forward_flops_per_sequence(p, p.max_seq_len, SMoEFlops{6, 32});
  v.require(fraction == 0.1875, "K/N fraction");
  v.require(static_cast<double>(sparse.ffn) / static_cast<double>(dense.ffn) == 0.1875, "expert FLOPs ratio");
  const double speedup = ssd_speedup(p, p.max_seq_len, 6, 32, 0.5);
  v.require(speedup >= 1.3 && speedup <= 1.5, "speedup outside [1.3, 1.5]");
  v.detail << "K/N " << fraction << ", speedup at r=0.5 " << speedup;
}

TrainConfig small_ssd_config() {
  TrainConfig c;
  c.model = ModelConfig::toy();
  c.model.max_seq_len = 16;
  c.mode = TrainMode::kSSD;
  c.seed = 9;
  c.steps = 60;
  c.batch_size = 4;
  c.seq_len = 16;
  c.warmup_steps = 20;
  c.ssd.policy = SwitchPolicy::kRandom;
  c.ssd.random_probability = 1.0;
  c.ssd.monitor_interval = 5;
  c.validation_interval = 20;
  c.validation_sequences = 8;
  c.sparsity_interval = 10;
  c.checkpoint_interval = 1000;
  return c;
}

void determinism_and_resume(Verdict& v, const fs::path& work) {
  const TrainConfig c = small_ssd_config();
  const TokenizedCorpus corpus = tokenize_text(generate_toy_corpus(50000, 2), {"", 0.1, 16}, 16);
  const TrainResult a = train(c, corpus, work / "det_a");
  const TrainResult b = train(c, corpus, work / "det_b");
  v.require(a.metrics == b.metrics, "metrics differ between identical runs");
  v.require(encode_checkpoint(a.checkpoint) == encode_checkpoint(b.checkpoint), "checkpoints differ");
  TrainOptions first;
  first.stop_at = 23;
  train(c, corpus, work / "det_resume", first);
  TrainOptions second;
  second.resume_from = work / "det_resume" / "ckpt_23.ssd";
  const TrainResult resumed = train(c, corpus, work / "det_resume", second);
  v.require(resumed.metrics == a.metrics, "resumed metrics differ");
  v.require(encode_checkpoint(resumed.checkpoint) == encode_checkpoint(a.checkpoint), "resumed checkpoint differs");
  std::size_t transitions = 0;
  for (const auto& r : a.metrics) transitions += r.events.size();
  v.detail << c.steps << "-step ssd run with " << transitions << " transitions, resumed at step 23, bit-identical";
}

void dynamic_topk_check(Verdict& v) {
  Rng rng(1111);
  const Matrix centroids = oracle::random_matrix(8, 3, rng);
  std::vector<GateDecision> d;
  for (int t = 0; t < 25; ++t) d.push_back(gate(centroids, std::vector<double>{rng.normal(), rng.normal(), rng.normal()}, 4));
  const auto same = dynamic_topk(d, 0.0);
  for (std::size_t t = 0; t < d.size(); ++t) v.require(same[t].selected == d[t].selected, "rho=0 not identity");

  for (double rho : {0.1, 0.3, 0.5, 0.75, 0.9}) {
    const auto out = dynamic_topk(d, rho);
    const auto base = static_cast<std::size_t>(std::ceil((1.0 - rho) * 100.0 - 1e-9));
    std::size_t kept = 0, protected_adds = 0;
    double min_kept_unprotected = INFINITY, max_dropped = -INFINITY;
    std::vector<std::pair<double, bool>> kept_scores;
    for (std::size_t t = 0; t < d.size(); ++t) {
      const std::size_t top1 = d[t].selected.front();
      v.require(out[t].is_selected(top1), "top-1 dropped");
      for (std::size_t e : d[t].selected) {
        const double s = d[t].scores[e];
        if (out[t].is_selected(e)) {
          ++kept;
          if (e != top1) min_kept_unprotected = std::min(min_kept_unprotected, s);
          kept_scores.emplace_back(s, e == top1);
        } else {
          max_dropped = std::max(max_dropped, s);
        }
      }
    }
    // Protected pairs that fall below the pooled cut are re-additions.
    std::vector<double> pooled;
    for (const auto& g : d) {
      for (std::size_t e : g.selected) pooled.push_back(g.scores[e]);
    }
    std::sort(pooled.rbegin(), pooled.rend());
    const double cut = pooled[base - 1];
    for (const auto& [s, is_top1] : kept_scores) protected_adds += (is_top1 && s < cut) ? 1 : 0;
    v.require(kept == base + protected_adds, "kept count");
    v.require(!(max_dropped > min_kept_unprotected), "a dropped pair outscores a kept pair");
  }
  v.detail << "rho in {0, 0.1, 0.3, 0.5, 0.75, 0.9} over 100 candidate pairs";
}

void transition_continuity(Verdict& v, const fs::path& work) {
  TrainConfig c = small_ssd_config();
  c.steps = 120;
  c.ssd.monitor_interval = 10;
  const TokenizedCorpus corpus = tokenize_text(generate_toy_corpus(50000, 3), {"", 0.1, 16}, 16);
  const TrainResult run = train(c, corpus, work / "continuity");
  std::size_t to_sparse = 0, to_dense = 0;
  for (const auto& r : run.metrics) {
    for (const auto& e : r.events) {
      if (!e.loss_before.has_value()) continue;
      v.require(e.loss_after.has_value() && *e.loss_before == *e.loss_after,
                "loss changed across the transition at step " + std::to_string(e.step));
      (e.kind == TransitionKind::kToSparse ? to_sparse : to_dense) += 1;
    }
  }
  v.require(to_sparse >= 1 && to_dense >= 1, "run lacked a transition in each direction");

  // Direct check on the trained weights: cluster, split with K = N, evaluate, merge.
  Model m = run.checkpoint.model;
  const TokenBatch eval = fixed_windows(corpus.validation, 16, c.seq_len);
  const double before = evaluation_loss(m, eval);
  Rng rng(12);
  const auto measured = measure_activation_pattern(m, std::vector<std::optional<Partition>>(m.blocks.size()),
                                                   c.ssd_experts, rng, true);
  std::vector<Partition> parts;
  for (const auto& o : measured.outcomes) parts.push_back(o.partition);
  const auto dense_values = m.parameter_values();
  sparsify_model(m, parts, c.ssd_experts);
  const double after = evaluation_loss(m, eval);
  densify_model(m);
  v.require(before == after, "direct split changed the loss");
  v.require(m.parameter_values() == dense_values, "merge did not restore the weights");
  v.detail << to_sparse << " dense-to-sparse and " << to_dense << " sparse-to-dense transitions, all 0 ULP";
}

}  // namespace

int main() {
  const fs::path work = work_dir();
  const std::vector<std::pair<std::string, std::function<void(Verdict&)>>> criteria = {
      {"K=N equivalence", k_equals_n},
      {"split/merge round trip", split_merge},
      {"zero gradient for unselected experts", zero_gradient},
      {"gradient fidelity", gradient_fidelity},
      {"scheduler arithmetic", scheduler_arithmetic},
      {"warm-start selection and balance", warm_start_selection},
      {"ARI oracle", ari_oracle},
      {"activation sparsity", [&](Verdict& v) { sparsity_growth(v, work); }},
      {"FLOPs model", flops_model},
      {"determinism and resume", [&](Verdict& v) { determinism_and_resume(v, work); }},
      {"dynamic top-k", dynamic_topk_check},
      {"transition continuity", [&](Verdict& v) { transition_continuity(v, work); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      criteria[i].second(v);
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "exception: " << e.what();
    }
    failures += v.pass ? 0 : 1;
    std::printf("%s %2zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), v.detail.str().c_str());
    std::fflush(stdout);
  }
  fs::remove_all(work);
  return failures == 0 ? 0 : 1;
}
