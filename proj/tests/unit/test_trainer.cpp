// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ssdlab/flops.hpp"
#include "ssdlab/trainer.hpp"

namespace ssdlab {
namespace {

namespace fs = std::filesystem;

TrainConfig small_config(TrainMode mode) {
  TrainConfig c;
  c.model.n_layers = 2;
  c.model.d_model = 16;
  c.model.n_heads = 2;
  c.model.d_ff = 48;
  c.model.vocab_size = kByteVocabSize;
  c.model.max_seq_len = 16;
  c.mode = mode;
  c.seed = 5;
  c.steps = 40;
  c.batch_size = 2;
  c.seq_len = 12;
  c.warmup_steps = 10;
  c.ssd_experts = 8;
  c.ssd_top_k = 2;
  c.ssd.policy = SwitchPolicy::kRandom;
  c.ssd.random_probability = 1.0;
  c.ssd.monitor_interval = 4;
  c.validation_interval = 10;
  c.validation_sequences = 4;
  c.sparsity_interval = 3;
  c.checkpoint_interval = 100;
  return c;
}

const TokenizedCorpus& corpus() {
  static const TokenizedCorpus c = tokenize_text(generate_toy_corpus(20000, 1), {"", 0.1, 12}, 16);
  return c;
}

class TrainerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("ssdlab_trainer_" + std::string(
        ::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  fs::path dir(const std::string& name) const { return root_ / name; }

  fs::path root_;
};

TEST_F(TrainerTest, SameSeedIsBitIdentical) {
  for (TrainMode mode : {TrainMode::kDense, TrainMode::kSMoE, TrainMode::kSSD}) {
    const TrainConfig c = small_config(mode);
    const auto a = train(c, corpus(), dir("a"));
    const auto b = train(c, corpus(), dir("b"));
    EXPECT_EQ(a.metrics, b.metrics) << to_string(mode);
    EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
    fs::remove_all(root_);
  }
}

TEST_F(TrainerTest, ResumeMatchesUninterruptedRun) {
  for (TrainMode mode : {TrainMode::kDense, TrainMode::kSSD}) {
    const TrainConfig c = small_config(mode);
    const auto full = train(c, corpus(), dir("full"));
    for (std::uint64_t stop : {1u, 9u, 17u}) {
      const fs::path run = dir("part" + std::to_string(stop));
      TrainOptions first;
      first.stop_at = stop;
      train(c, corpus(), run, first);
      TrainOptions second;
      second.resume_from = run / ("ckpt_" + std::to_string(stop) + ".ssd");
      const auto resumed = train(c, corpus(), run, second);
      EXPECT_EQ(resumed.metrics, full.metrics) << to_string(mode) << " stop " << stop;
      EXPECT_EQ(encode_checkpoint(resumed.checkpoint), encode_checkpoint(full.checkpoint));
      EXPECT_EQ(read_metrics_jsonl(run / "metrics.jsonl"), full.metrics);
    }
    fs::remove_all(root_);
  }
}

TEST_F(TrainerTest, ResumeRejectsForeignCheckpoint) {
  const TrainConfig c = small_config(TrainMode::kDense);
  TrainOptions first;
  first.stop_at = 3;
  train(c, corpus(), dir("r"), first);
  TrainConfig other = c;
  other.seed = 6;
  TrainOptions second;
  second.resume_from = dir("r") / "ckpt_3.ssd";
  EXPECT_THROW(train(other, corpus(), dir("r"), second), std::invalid_argument);
}

TEST_F(TrainerTest, SsdWithoutSparseShareReproducesDense) {
  TrainConfig ssd = small_config(TrainMode::kSSD);
  ssd.ssd.sparse_ratio = 0.0;
  const auto a = train(ssd, corpus(), dir("ssd"));
  const auto b = train(small_config(TrainMode::kDense), corpus(), dir("dense"));
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) EXPECT_EQ(a.metrics[i].loss, b.metrics[i].loss);
  EXPECT_EQ(a.checkpoint.model.parameter_values(), b.checkpoint.model.parameter_values());
}

TEST_F(TrainerTest, SsdTransitionsAreContinuousAndFlopsAddUp) {
  const TrainConfig c = small_config(TrainMode::kSSD);
  const auto r = train(c, corpus(), dir("ssd"));
  std::uint64_t dense = 0, sparse = 0, to_sparse = 0, to_dense = 0;
  for (const auto& rec : r.metrics) {
    (rec.phase == Phase::kSparse ? sparse : dense) += 1;
    for (const auto& ev : rec.events) {
      if (ev.kind == TransitionKind::kToSparse) ++to_sparse;
      if (ev.kind != TransitionKind::kToSparse && ev.loss_before.has_value()) ++to_dense;
      if (ev.loss_before.has_value()) {
        EXPECT_EQ(*ev.loss_before, *ev.loss_after) << "step " << ev.step;
      }
    }
  }
  EXPECT_GE(to_sparse, 2u);
  EXPECT_GE(to_dense, 2u);
  EXPECT_GT(sparse, 0u);
  const auto est = flops_estimate(c.model, c.seq_len, c.batch_size, SSDFlops{c.ssd_top_k, c.ssd_experts, dense, sparse});
  EXPECT_EQ(r.checkpoint.cumulative_flops, est.total);
  EXPECT_EQ(r.metrics.back().flops, est.total);
  EXPECT_NO_THROW(validate_metrics(r.metrics));
  EXPECT_EQ(replay_phases(r.checkpoint.scheduler->events, c.steps).back(), Phase::kFinalDense);
  EXPECT_FALSE(r.checkpoint.model.any_sparse());
}

TEST_F(TrainerTest, RunDirectoryContents) {
  TrainConfig c = small_config(TrainMode::kDense);
  c.checkpoint_interval = 16;
  train(c, corpus(), dir("run"));
  for (const char* f : {"config.json", "manifest.json", "ckpt_16.ssd", "ckpt_32.ssd", "final.ssd", "metrics.jsonl",
                        "metrics.csv"}) {
    EXPECT_TRUE(fs::exists(dir("run") / f)) << f;
  }
  EXPECT_EQ(TrainConfig::load(dir("run") / "config.json").to_json(), c.to_json());
}

TEST(TrainConfigJson, RoundTripAndStrictKeys) {
  TrainConfig c = small_config(TrainMode::kSSD);
  c.ssd.threshold = 0.85;
  c.independent_clustering = true;
  EXPECT_EQ(TrainConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_THROW(TrainConfig::from_json(R"({"stepz": 3})"), std::invalid_argument);
  EXPECT_THROW(TrainConfig::from_json(R"({"ssd": {"tau": 0.5}})"), std::invalid_argument);
  EXPECT_THROW(TrainConfig::from_json(R"({"model": {"preset": "huge"}})"), std::invalid_argument);
  EXPECT_THROW(TrainConfig::from_json(R"({"steps": "ten"})"), std::invalid_argument);
  EXPECT_THROW(TrainConfig::from_json("{"), std::invalid_argument);
  EXPECT_EQ(TrainConfig::from_json(R"({"model": {"preset": "toy"}})").model, ModelConfig::toy());
}

TEST(TrainConfigJson, Validation) {
  TrainConfig c = small_config(TrainMode::kSSD);
  EXPECT_NO_THROW(c.validate());
  c.ssd_experts = 7;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config(TrainMode::kSSD);
  c.ssd_top_k = 9;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config(TrainMode::kDense);
  c.seq_len = 17;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(train_mode_from_string("sparse"), std::invalid_argument);
}

TEST(Evaluation, AllExpertsMatchDenseAndUniformModel) {
  Rng rng(3);
  ModelConfig mc = small_config(TrainMode::kDense).model;
  Model m = Model::init(mc, rng);
  const TokenBatch eval = fixed_windows(corpus().validation, 6, 12);
  const double dense = eval_perplexity(m, eval);
  EXPECT_EQ(eval_perplexity(m, eval, SparseEvalConfig{8, 0.0, 8, 1}), dense);
  const double sparse = eval_perplexity(m, eval, SparseEvalConfig{2, 0.0, 8, 1});
  EXPECT_TRUE(std::isfinite(sparse));
  EXPECT_NE(sparse, dense);
  const Model moe = moefy(m, 8, 2, 1);
  EXPECT_EQ(eval_perplexity(moe, eval, SparseEvalConfig{2, 0.0, 8, 1}), sparse);
  EXPECT_EQ(eval_perplexity(moe, eval, SparseEvalConfig{8, 0.0, 8, 1}), dense);
  EXPECT_THROW(moefy(moe, 8, 2, 1), std::invalid_argument);

  m.head_w.fill(0.0);
  m.head_b.fill(0.0);
  EXPECT_NEAR(eval_perplexity(m, eval), 256.0, 1e-9);
}

TEST(Evaluation, DynamicRatioDropsWork) {
  Rng rng(4);
  const Model m = Model::init(small_config(TrainMode::kDense).model, rng);
  const TokenBatch eval = fixed_windows(corpus().validation, 4, 12);
  const Model moe = moefy(m, 8, 4, 2);
  EXPECT_EQ(eval_perplexity(moe, eval, SparseEvalConfig{4, 0.0, 8, 2}),
            std::exp(evaluation_loss(moe, eval, SparseEvalOptions{4, 0.0})));
  EXPECT_TRUE(std::isfinite(eval_perplexity(moe, eval, SparseEvalConfig{4, 0.5, 8, 2})));
}

}  // namespace
}  // namespace ssdlab
