// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

// ssdlab command-line interface: train, moefy, eval, analyze, export.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssdlab/analysis.hpp"
#include "ssdlab/checkpoint.hpp"
#include "ssdlab/corpus.hpp"
#include "ssdlab/metrics.hpp"
#include "ssdlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace ssdlab;

namespace {

struct TrainArgs {
  std::string config, corpus, mode, out, resume;
  std::optional<std::uint64_t> seed, steps, stop_at;
  bool quiet = false;
};

struct MoefyArgs {
  std::string checkpoint, out;
  std::size_t experts = 0;
  std::optional<std::size_t> top_k;
  std::uint64_t seed = 0;
};

struct EvalArgs {
  std::string checkpoint, corpus;
  std::optional<std::size_t> k;
  std::optional<double> dynamic_ratio;
  std::size_t experts = 32;
  std::uint64_t seed = 0;
  std::optional<std::size_t> seq_len;
  std::size_t sequences = 64;
  double validation_fraction = 0.1;
};

struct AnalyzeArgs {
  std::string checkpoint_a, checkpoint_b, corpus;
  std::size_t experts = 32;
  std::uint64_t seed = 0;
  bool independent = false;
  std::size_t tokens = 4096;
};

struct ExportArgs {
  std::string run_dir, format, out;
};

struct ToyCorpusArgs {
  std::size_t bytes = 1000000;
  std::uint64_t seed = 0;
  std::string out;
};

std::size_t default_seq_len(const ModelConfig& cfg) { return std::min<std::size_t>(32, cfg.max_seq_len); }

int run_train(const TrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : TrainConfig::load(a.config);
  if (!a.mode.empty()) cfg.mode = train_mode_from_string(a.mode);
  if (a.seed) cfg.seed = *a.seed;
  if (a.steps) cfg.steps = *a.steps;
  cfg.validate();

  CorpusConfig cc{a.corpus, cfg.validation_fraction, cfg.seq_len};
  const TokenizedCorpus corpus = tokenize_corpus(cc, cfg.model.max_seq_len);

  TrainOptions opts;
  opts.stop_at = a.stop_at;
  if (!a.resume.empty()) opts.resume_from = fs::path(a.resume);
  opts.threads = configured_threads();
  if (!a.quiet) {
    opts.on_record = [](const MetricsRecord& r) {
      for (const auto& e : r.events) {
        std::printf("step %llu: %s", static_cast<unsigned long long>(e.step), to_string(e.kind).c_str());
        if (e.similarity) std::printf(" (similarity %.4f, budget %llu)", *e.similarity,
                                      static_cast<unsigned long long>(e.sparse_budget));
        std::printf("\n");
      }
      if (r.ppl) {
        std::printf("step %llu  phase %-11s loss %.4f  val ppl %.4f\n", static_cast<unsigned long long>(r.step + 1),
                    to_string(r.phase).c_str(), r.loss, *r.ppl);
        std::fflush(stdout);
      }
    };
  }
  const TrainResult res = train(cfg, corpus, a.out, opts);
  std::printf("trained %s model to step %llu, %llu FLOPs; run directory %s\n", to_string(cfg.mode).c_str(),
              static_cast<unsigned long long>(res.checkpoint.step),
              static_cast<unsigned long long>(res.checkpoint.cumulative_flops), a.out.c_str());
  return 0;
}

int run_moefy(const MoefyArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  if (ck.model.any_sparse()) throw std::invalid_argument("moefy: checkpoint already has an expert structure");
  const std::size_t top_k = a.top_k.value_or(std::min<std::size_t>(6, a.experts));
  ck.model = moefy(ck.model, a.experts, top_k, a.seed, configured_threads());
  ck.optimizer.reset();
  ck.scheduler.reset();
  save_checkpoint(ck, a.out);
  std::printf("split %zu layers into %zu experts (top-%zu); wrote %s\n", ck.model.blocks.size(), a.experts, top_k,
              a.out.c_str());
  return 0;
}

int run_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const ModelConfig& mc = ck.model.config;
  CorpusConfig cc{a.corpus, a.validation_fraction, a.seq_len.value_or(default_seq_len(mc))};
  const TokenizedCorpus corpus = tokenize_corpus(cc, mc.max_seq_len);
  if (corpus.validation.empty()) throw std::invalid_argument("eval: missing validation set");
  const TokenBatch eval = fixed_windows(corpus.validation, a.sequences, cc.seq_len);

  std::optional<SparseEvalConfig> sparse;
  if (a.k || a.dynamic_ratio) {
    SparseEvalConfig s;
    s.n_experts = a.experts;
    s.seed = a.seed;
    s.dynamic_ratio = a.dynamic_ratio.value_or(0.0);
    if (a.k) {
      s.top_k = *a.k;
    } else if (const auto* m = ck.model.blocks.empty() ? nullptr : std::get_if<SMoEFFN>(&ck.model.blocks[0].ffn)) {
      s.top_k = m->top_k;
    } else {
      throw std::invalid_argument("eval: --dynamic-ratio on a dense checkpoint also needs --k");
    }
    sparse = s;
  }
  const double ppl = eval_perplexity(ck.model, eval, sparse, configured_threads());
  std::printf("perplexity %.6f\n", ppl);
  return 0;
}

int run_analyze(const AnalyzeArgs& a) {
  const Checkpoint ca = load_checkpoint(a.checkpoint_a);
  const Checkpoint cb = load_checkpoint(a.checkpoint_b);
  if (!(ca.model.config == cb.model.config)) throw std::invalid_argument("analyze: checkpoints have different configs");
  const ModelConfig& mc = ca.model.config;
  const std::size_t seq_len = default_seq_len(mc);
  TokenBatch inputs;
  if (!a.corpus.empty()) {
    const TokenizedCorpus corpus = tokenize_corpus(CorpusConfig{a.corpus, 0.1, seq_len}, mc.max_seq_len);
    inputs = fixed_windows(corpus.validation, (a.tokens + seq_len - 1) / seq_len, seq_len);
  } else {
    Rng rng(a.seed);
    inputs = random_token_batch(mc.vocab_size, (a.tokens + seq_len - 1) / seq_len, seq_len, rng);
  }
  PatternOptions po;
  po.n_experts = a.experts;
  po.seed = a.seed;
  po.independent = a.independent;
  const SimilarityReport rep = pattern_similarity(ca.model, cb.model, po, ca.step, cb.step);

  nlohmann::ordered_json j;
  j["step_a"] = ca.step;
  j["step_b"] = cb.step;
  j["sparsity_a"] = model_sparsity(ca.model, inputs);
  j["sparsity_b"] = model_sparsity(cb.model, inputs);
  j["ari_per_layer"] = rep.per_layer;
  j["mean_ari"] = rep.mean;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int run_export(const ExportArgs& a) {
  const fs::path dir(a.run_dir);
  const TrainConfig cfg = TrainConfig::load(dir / "config.json");
  const auto records = read_metrics_jsonl(dir / "metrics.jsonl");
  const MetricsFormat format = metrics_format_from_string(a.format);
  const fs::path out = a.out.empty() ? dir / (format == MetricsFormat::kCsv ? "export.csv" : "export.jsonl") : fs::path(a.out);
  export_metrics(records, cfg.model.n_layers, format, out);
  std::printf("wrote %zu records to %s\n", records.size(), out.string().c_str());
  return 0;
}

int run_toy_corpus(const ToyCorpusArgs& a) {
  const std::string text = generate_toy_corpus(a.bytes, a.seed);
  std::ofstream out(a.out, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + a.out + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + a.out);
  std::printf("wrote %zu bytes to %s\n", text.size(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ssdlab: switchable sparse-dense training lab"};
  app.require_subcommand(1);
  int (*action)() = nullptr;
  static TrainArgs train_args;
  static MoefyArgs moefy_args;
  static EvalArgs eval_args;
  static AnalyzeArgs analyze_args;
  static ExportArgs export_args;
  static ToyCorpusArgs toy_args;

  auto* train_cmd = app.add_subcommand("train", "Train a model in dense, smoe or ssd mode");
  train_cmd->add_option("--config", train_args.config, "JSON run configuration")->check(CLI::ExistingFile);
  train_cmd->add_option("--corpus", train_args.corpus, "Raw text corpus")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--mode", train_args.mode, "dense | smoe | ssd")
      ->check(CLI::IsMember({"dense", "smoe", "ssd"}));
  train_cmd->add_option("--seed", train_args.seed, "Random seed");
  train_cmd->add_option("--steps", train_args.steps, "Total training steps");
  train_cmd->add_option("--out", train_args.out, "Run directory")->required();
  train_cmd->add_option("--resume", train_args.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  train_cmd->add_option("--stop-at", train_args.stop_at, "Stop after this many total steps");
  train_cmd->add_flag("--quiet", train_args.quiet, "Only print the final summary");
  train_cmd->callback([&] { action = [] { return run_train(train_args); }; });

  auto* moefy_cmd = app.add_subcommand("moefy", "Cluster and split a dense checkpoint into experts");
  moefy_cmd->add_option("--checkpoint", moefy_args.checkpoint, "Dense checkpoint")->required()->check(CLI::ExistingFile);
  moefy_cmd->add_option("--experts", moefy_args.experts, "Number of experts N")->required()->check(CLI::PositiveNumber);
  moefy_cmd->add_option("--top-k", moefy_args.top_k, "Selected experts K (default min(6, N))")
      ->check(CLI::PositiveNumber);
  moefy_cmd->add_option("--seed", moefy_args.seed, "Clustering seed");
  moefy_cmd->add_option("--out", moefy_args.out, "Output checkpoint")->required();
  moefy_cmd->callback([&] { action = [] { return run_moefy(moefy_args); }; });

  auto* eval_cmd = app.add_subcommand("eval", "Validation perplexity of a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--corpus", eval_args.corpus, "Raw text corpus")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--k", eval_args.k, "Evaluate sparsely with K experts per token")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--dynamic-ratio", eval_args.dynamic_ratio, "Dynamic top-k truncation ratio in [0, 1)")
      ->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--experts", eval_args.experts, "N when a dense checkpoint must be MoEfied")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval_args.seed, "Clustering seed for MoEfication");
  eval_cmd->add_option("--seq-len", eval_args.seq_len, "Tokens of context per sequence")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--sequences", eval_args.sequences, "Validation sequences")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--validation-fraction", eval_args.validation_fraction, "Validation document share");
  eval_cmd->callback([&] { action = [] { return run_eval(eval_args); }; });

  auto* analyze_cmd = app.add_subcommand("analyze", "Activation sparsity and pattern similarity of two checkpoints");
  analyze_cmd->add_option("--checkpoint-a", analyze_args.checkpoint_a, "Earlier checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  analyze_cmd->add_option("--checkpoint-b", analyze_args.checkpoint_b, "Later checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  analyze_cmd->add_option("--experts", analyze_args.experts, "Clusters per layer")->check(CLI::PositiveNumber);
  analyze_cmd->add_option("--seed", analyze_args.seed, "Clustering and input seed");
  analyze_cmd->add_flag("--independent", analyze_args.independent, "Cluster the second checkpoint without warm start");
  analyze_cmd->add_option("--corpus", analyze_args.corpus, "Measure sparsity on validation text instead of random tokens")
      ->check(CLI::ExistingFile);
  analyze_cmd->add_option("--tokens", analyze_args.tokens, "Tokens for the sparsity measurement")
      ->check(CLI::PositiveNumber);
  analyze_cmd->callback([&] { action = [] { return run_analyze(analyze_args); }; });

  auto* export_cmd = app.add_subcommand("export", "Export a run's metrics stream");
  export_cmd->add_option("--run-dir", export_args.run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  export_cmd->add_option("--format", export_args.format, "csv | jsonl")->required()->check(CLI::IsMember({"csv", "jsonl"}));
  export_cmd->add_option("--out", export_args.out, "Output file (default <run-dir>/export.<ext>)");
  export_cmd->callback([&] { action = [] { return run_export(export_args); }; });

  auto* toy_cmd = app.add_subcommand("toy-corpus", "Write a repetitive synthetic text corpus");
  toy_cmd->add_option("--bytes", toy_args.bytes, "Approximate size")->check(CLI::PositiveNumber);
  toy_cmd->add_option("--seed", toy_args.seed, "Generator seed");
  toy_cmd->add_option("--out", toy_args.out, "Output path")->required();
  toy_cmd->callback([&] { action = [] { return run_toy_corpus(toy_args); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    return action();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "ssdlab: error: %s\n", e.what());
    return 1;
  }
}
