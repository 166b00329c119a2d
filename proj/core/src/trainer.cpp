// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssdlab/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "json.hpp"
#include "ssdlab/analysis.hpp"
#include "ssdlab/flops.hpp"

namespace ssdlab {

namespace {

using Json = nlohmann::ordered_json;

// Reads known keys from `j`, rejecting anything else.
class KeyReader {
 public:
  KeyReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw std::invalid_argument(where_ + ": expected a JSON object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.push_back(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(where_ + "." + key + ": " + e.what());
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.push_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      bool known = false;
      for (const auto& k : seen_) known = known || item.key() == k;
      if (!known) throw std::invalid_argument(where_ + ": unknown key '" + item.key() + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

ModelConfig model_preset(const std::string& name) {
  if (name == "toy") return ModelConfig::toy();
  if (name == "desk") return ModelConfig::desk();
  if (name == "paper") return ModelConfig::paper();
  throw std::invalid_argument("unknown model preset '" + name + "' (expected toy, desk or paper)");
}

SwitchPolicy policy_from_string(const std::string& s) {
  if (s == "threshold") return SwitchPolicy::kThreshold;
  if (s == "random") return SwitchPolicy::kRandom;
  throw std::invalid_argument("unknown switch policy '" + s + "' (expected threshold or random)");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<Partition> partitions_of(const PatternMeasurement& m) {
  std::vector<Partition> out;
  for (const auto& o : m.outcomes) out.push_back(o.partition);
  return out;
}

std::vector<std::optional<Partition>> as_optional(const std::vector<Partition>& parts) {
  return {parts.begin(), parts.end()};
}

// Evaluation loss with every expert active: equals the dense loss to the last bit.
double continuity_loss(const Model& model, const TokenBatch& eval) {
  SparseEvalOptions all;
  for (const auto& blk : model.blocks) {
    if (const auto* s = std::get_if<SMoEFFN>(&blk.ffn)) all.top_k = s->n_experts();
  }
  return evaluation_loss(model, eval, all);
}

}  // namespace

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kDense:
      return "dense";
    case TrainMode::kSMoE:
      return "smoe";
    case TrainMode::kSSD:
      return "ssd";
  }
  return "unknown";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "dense") return TrainMode::kDense;
  if (s == "smoe") return TrainMode::kSMoE;
  if (s == "ssd") return TrainMode::kSSD;
  throw std::invalid_argument("unknown mode '" + s + "' (expected dense, smoe or ssd)");
}

SSDConfig TrainConfig::scheduler_config() const {
  SSDConfig s = ssd;
  s.total_steps = steps;
  return s;
}

void TrainConfig::validate() const {
  model.validate();
  if (steps < 1) throw std::invalid_argument("config: steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (seq_len < 1 || seq_len > model.max_seq_len) {
    throw std::invalid_argument("config: seq_len must lie in [1, max_seq_len]");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("config: validation_fraction must lie in (0, 1)");
  }
  if (warmup_steps < 1) throw std::invalid_argument("config: warmup_steps must be >= 1");
  if (!(lr_base > 0.0)) throw std::invalid_argument("config: lr_base must be positive");
  auto check_experts = [&](const char* what, std::size_t n, std::size_t k) {
    if (n < 1 || model.d_ff % n != 0) {
      throw std::invalid_argument(std::string("config: ") + what + " expert count must divide d_ff");
    }
    if (k < 1 || k > n) throw std::invalid_argument(std::string("config: ") + what + " top_k must lie in [1, N]");
  };
  check_experts("smoe", smoe_experts, smoe_top_k);
  check_experts("ssd", ssd_experts, ssd_top_k);
  scheduler_config().validate();
  if (validation_interval < 1 || sparsity_interval < 1 || checkpoint_interval < 1) {
    throw std::invalid_argument("config: intervals must be >= 1");
  }
  if (validation_sequences < 1) throw std::invalid_argument("config: validation_sequences must be >= 1");
}

std::string TrainConfig::to_json() const {
  Json j;
  j["model"] = {{"n_layers", model.n_layers},       {"d_model", model.d_model},
                {"n_heads", model.n_heads},         {"d_ff", model.d_ff},
                {"vocab_size", model.vocab_size},   {"max_seq_len", model.max_seq_len},
                {"ln_eps", model.ln_eps},           {"init_std", model.init_std}};
  j["mode"] = ssdlab::to_string(mode);
  j["seed"] = seed;
  j["steps"] = steps;
  j["batch_size"] = batch_size;
  j["seq_len"] = seq_len;
  j["validation_fraction"] = validation_fraction;
  j["adam"] = {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}};
  j["warmup_steps"] = warmup_steps;
  j["lr_base"] = lr_base;
  j["smoe_experts"] = smoe_experts;
  j["smoe_top_k"] = smoe_top_k;
  j["ssd_experts"] = ssd_experts;
  j["ssd_top_k"] = ssd_top_k;
  j["ssd"] = {{"threshold", ssd.threshold},
              {"sparse_ratio", ssd.sparse_ratio},
              {"final_dense_ratio", ssd.final_dense_ratio},
              {"monitor_interval", ssd.monitor_interval},
              {"policy", ssd.policy == SwitchPolicy::kThreshold ? "threshold" : "random"},
              {"random_probability", ssd.random_probability}};
  j["reset_optimizer_on_transition"] = reset_optimizer_on_transition;
  j["independent_clustering"] = independent_clustering;
  j["validation_interval"] = validation_interval;
  j["validation_sequences"] = validation_sequences;
  j["sparsity_interval"] = sparsity_interval;
  j["checkpoint_interval"] = checkpoint_interval;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
  }
  TrainConfig c;
  KeyReader r(j, "config");
  if (const auto* m = r.child("model")) {
    KeyReader mr(*m, "config.model");
    std::string preset;
    mr.read("preset", preset);
    if (!preset.empty()) c.model = model_preset(preset);
    mr.read("n_layers", c.model.n_layers);
    mr.read("d_model", c.model.d_model);
    mr.read("n_heads", c.model.n_heads);
    mr.read("d_ff", c.model.d_ff);
    mr.read("vocab_size", c.model.vocab_size);
    mr.read("max_seq_len", c.model.max_seq_len);
    mr.read("ln_eps", c.model.ln_eps);
    mr.read("init_std", c.model.init_std);
    mr.finish();
  }
  std::string mode = to_string(c.mode);
  r.read("mode", mode);
  c.mode = train_mode_from_string(mode);
  r.read("seed", c.seed);
  r.read("steps", c.steps);
  r.read("batch_size", c.batch_size);
  r.read("seq_len", c.seq_len);
  r.read("validation_fraction", c.validation_fraction);
  if (const auto* a = r.child("adam")) {
    KeyReader ar(*a, "config.adam");
    ar.read("beta1", c.adam.beta1);
    ar.read("beta2", c.adam.beta2);
    ar.read("eps", c.adam.eps);
    ar.finish();
  }
  r.read("warmup_steps", c.warmup_steps);
  r.read("lr_base", c.lr_base);
  r.read("smoe_experts", c.smoe_experts);
  r.read("smoe_top_k", c.smoe_top_k);
  r.read("ssd_experts", c.ssd_experts);
  r.read("ssd_top_k", c.ssd_top_k);
  if (const auto* s = r.child("ssd")) {
    KeyReader sr(*s, "config.ssd");
    sr.read("threshold", c.ssd.threshold);
    sr.read("sparse_ratio", c.ssd.sparse_ratio);
    sr.read("final_dense_ratio", c.ssd.final_dense_ratio);
    sr.read("monitor_interval", c.ssd.monitor_interval);
    std::string policy = c.ssd.policy == SwitchPolicy::kThreshold ? "threshold" : "random";
    sr.read("policy", policy);
    c.ssd.policy = policy_from_string(policy);
    sr.read("random_probability", c.ssd.random_probability);
    sr.finish();
  }
  r.read("reset_optimizer_on_transition", c.reset_optimizer_on_transition);
  r.read("independent_clustering", c.independent_clustering);
  r.read("validation_interval", c.validation_interval);
  r.read("validation_sequences", c.validation_sequences);
  r.read("sparsity_interval", c.sparsity_interval);
  r.read("checkpoint_interval", c.checkpoint_interval);
  r.finish();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) { return from_json(read_text(path)); }

TokenBatch training_batch(const TrainConfig& config, std::span<const std::int32_t> stream, std::uint64_t step) {
  Rng rng(mix64(config.seed ^ mix64(step + 0x5eed)));
  return sample_batch(stream, config.batch_size, config.seq_len, rng);
}

double evaluation_loss(const Model& model, const TokenBatch& eval, const SparseEvalOptions& sparse, std::size_t chunk) {
  if (eval.batch == 0) throw std::invalid_argument("evaluation: missing validation set");
  if (chunk == 0) chunk = eval.batch;
  double sum = 0.0;
  for (std::size_t b = 0; b < eval.batch; b += chunk) {
    const std::size_t n = std::min(chunk, eval.batch - b);
    TokenBatch part{n, eval.length, {}};
    part.ids.assign(eval.ids.begin() + static_cast<std::ptrdiff_t>(b * eval.length),
                    eval.ids.begin() + static_cast<std::ptrdiff_t>((b + n) * eval.length));
    LossOptions opts;
    opts.compute_gradients = false;
    opts.sparse = sparse;
    sum += lm_loss(model, part, opts).loss * static_cast<double>(n);
  }
  return sum / static_cast<double>(eval.batch);
}

std::vector<double> model_sparsity(const Model& model, const TokenBatch& inputs) {
  LossOptions opts;
  opts.compute_gradients = false;
  opts.capture_hidden = true;
  ActivationSample sample{lm_loss(model, inputs, opts).hidden, 0};
  return activation_sparsity(sample);
}

Model moefy(const Model& model, std::size_t n_experts, std::size_t top_k, std::uint64_t seed, std::size_t threads) {
  if (model.any_sparse()) throw std::invalid_argument("moefy: model already has sparse layers");
  Rng rng(seed);
  const std::vector<std::optional<Partition>> none(model.blocks.size());
  const auto measured = measure_activation_pattern(model, none, n_experts, rng, true, threads);
  Model out = model;
  sparsify_model(out, partitions_of(measured), top_k);
  return out;
}

double eval_perplexity(const Model& model, const TokenBatch& eval, const std::optional<SparseEvalConfig>& sparse,
                       std::size_t threads) {
  if (!sparse.has_value()) return std::exp(evaluation_loss(model, eval));
  SparseEvalOptions opts;
  opts.top_k = sparse->top_k;
  opts.dynamic_ratio = sparse->dynamic_ratio;
  if (model.any_sparse()) return std::exp(evaluation_loss(model, eval, opts));
  const Model sparse_model = moefy(model, sparse->n_experts, sparse->top_k, sparse->seed, threads);
  return std::exp(evaluation_loss(sparse_model, eval, opts));
}

TrainResult train(const TrainConfig& config, const TokenizedCorpus& corpus, const std::filesystem::path& run_dir,
                  const TrainOptions& options) {
  config.validate();
  const std::uint64_t stop = options.stop_at.value_or(config.steps);
  if (stop > config.steps) throw std::invalid_argument("train: stop_at beyond the configured steps");
  if (corpus.validation.empty()) throw std::invalid_argument("train: missing validation set");
  std::filesystem::create_directories(run_dir);
  write_text(run_dir / "config.json", config.to_json() + "\n");
  write_text(run_dir / "manifest.json", corpus.manifest.to_json() + "\n");

  const ModelConfig& mc = config.model;
  const TokenBatch validation = fixed_windows(corpus.validation, config.validation_sequences, config.seq_len);
  const SSDConfig ssd_cfg = config.scheduler_config();
  const bool ssd = config.mode == TrainMode::kSSD;

  Checkpoint ck;
  std::vector<MetricsRecord> metrics;
  Rng rng(config.seed);
  if (options.resume_from.has_value()) {
    ck = load_checkpoint(*options.resume_from);
    if (!(ck.model.config == mc)) throw std::invalid_argument("train: checkpoint model config differs from the run config");
    if (ck.seed != config.seed) throw std::invalid_argument("train: checkpoint seed differs from the run config");
    if (ck.step > stop) throw std::invalid_argument("train: checkpoint is past the requested stop step");
    if (ssd && !ck.scheduler.has_value()) throw std::invalid_argument("train: checkpoint lacks scheduler state");
    if (ssd && !(ck.scheduler->config == ssd_cfg)) {
      throw std::invalid_argument("train: checkpoint scheduler config differs from the run config");
    }
    rng = Rng::deserialize(config.seed, ck.rng_state);
    if (!ck.optimizer.has_value()) ck.optimizer = AdamState{config.adam, 0, {}, {}};
    const auto prior = run_dir / "metrics.jsonl";
    if (std::filesystem::exists(prior)) {
      for (auto& r : read_metrics_jsonl(prior)) {
        if (r.step < ck.step) metrics.push_back(std::move(r));
      }
    }
  } else {
    Rng init_rng(mix64(config.seed ^ 0x1a17));
    ck.model = Model::init(mc, init_rng);
    ck.seed = config.seed;
    ck.optimizer = AdamState{config.adam, 0, {}, {}};
    if (config.mode == TrainMode::kSMoE) {
      std::vector<Partition> parts;
      for (std::size_t l = 0; l < mc.n_layers; ++l) {
        parts.push_back(Partition::random_balanced(mc.d_ff, config.smoe_experts, init_rng));
      }
      sparsify_model(ck.model, parts, config.smoe_top_k);
    }
    if (ssd) ck.scheduler = SchedulerState::start(ssd_cfg, mc.n_layers);
  }

  Model& model = ck.model;
  AdamState& opt = *ck.optimizer;
  auto save = [&](const std::filesystem::path& path) {
    ck.rng_state = rng.serialize();
    save_checkpoint(ck, path);
  };

  for (std::uint64_t s = ck.step; s < stop; ++s) {
    std::size_t events_before = 0;
    if (ssd) {
      SchedulerState& sched = *ck.scheduler;
      events_before = sched.events.size();
      const auto taken = advance(sched, s);
      if (taken.has_value() && model.any_sparse()) {
        const double before = continuity_loss(model, validation);
        transition_sparse_to_dense(model, opt, sched, config.reset_optimizer_on_transition);
        const double after = continuity_loss(model, validation);
        sched.events.back().loss_before = before;
        sched.events.back().loss_after = after;
      }
    }

    const TokenBatch batch = training_batch(config, corpus.train, s);
    const double lr = noam_lr(s + 1, config.warmup_steps, mc.d_model, config.lr_base);
    LossOptions lo;
    lo.capture_hidden = s % config.sparsity_interval == 0;
    LossResult res = lm_loss(model, batch, lo);
    if (!std::isfinite(res.loss)) throw std::runtime_error("train: non-finite loss at step " + std::to_string(s));
    const auto grads = std::as_const(res.grads).parameters();
    adam_step(model.parameters(), grads, opt, lr);

    std::size_t top_k = 0, n_experts = 0;
    for (const auto& blk : model.blocks) {
      if (const auto* m = std::get_if<SMoEFFN>(&blk.ffn)) top_k = m->top_k, n_experts = m->n_experts();
    }
    ck.cumulative_flops += n_experts == 0
                               ? training_step_flops(mc, config.seq_len, config.batch_size, DenseFlops{})
                               : training_step_flops(mc, config.seq_len, config.batch_size, SMoEFlops{top_k, n_experts});

    MetricsRecord rec;
    rec.step = s;
    rec.phase = ssd ? ck.scheduler->phase : (config.mode == TrainMode::kSMoE ? Phase::kSparse : Phase::kDense);
    rec.loss = res.loss;
    rec.lr = lr;
    if (lo.capture_hidden) {
      ActivationSample sample{std::move(res.hidden), s};
      rec.sparsity = activation_sparsity(sample);
    }

    if (ssd && ck.scheduler->should_monitor()) {
      SchedulerState& sched = *ck.scheduler;
      const auto measured = measure_activation_pattern(model, sched.prev_partitions, config.ssd_experts, rng,
                                                       config.independent_clustering, options.threads);
      rec.similarity = measured.mean_ari;
      const auto parts = partitions_of(measured);
      if (on_monitor(sched, measured.mean_ari, s, rng)) {
        const double before = continuity_loss(model, validation);
        transition_dense_to_sparse(model, opt, sched, parts, config.ssd_top_k, config.reset_optimizer_on_transition);
        const double after = continuity_loss(model, validation);
        sched.events.back().loss_before = before;
        sched.events.back().loss_after = after;
      }
      sched.prev_partitions = as_optional(parts);
    }
    if (ssd) {
      const auto& ev = ck.scheduler->events;
      rec.events.assign(ev.begin() + static_cast<std::ptrdiff_t>(events_before), ev.end());
    }

    ck.step = s + 1;
    if (ck.step % config.validation_interval == 0 || ck.step == config.steps) {
      rec.ppl = std::exp(evaluation_loss(model, validation));
    }
    rec.flops = ck.cumulative_flops;
    metrics.push_back(rec);
    if (options.on_record) options.on_record(rec);
    if (ck.step % config.checkpoint_interval == 0) save(run_dir / ("ckpt_" + std::to_string(ck.step) + ".ssd"));
  }

  if (ck.step == config.steps) {
    save(run_dir / "final.ssd");
  } else if (ck.step % config.checkpoint_interval != 0) {
    save(run_dir / ("ckpt_" + std::to_string(ck.step) + ".ssd"));
  }
  ck.rng_state = rng.serialize();
  export_metrics(metrics, mc.n_layers, MetricsFormat::kJsonLines, run_dir / "metrics.jsonl");
  export_metrics(metrics, mc.n_layers, MetricsFormat::kCsv, run_dir / "metrics.csv");
  return {std::move(ck), std::move(metrics)};
}

}  // namespace ssdlab
