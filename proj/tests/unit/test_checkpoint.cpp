// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include "ssdlab/checkpoint.hpp"

namespace ssdlab {
namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.vocab_size = 11;
  c.max_seq_len = 6;
  c.init_std = 0.3;
  return c;
}

Checkpoint populated(bool sparse) {
  Rng rng(42);
  Checkpoint c;
  c.model = Model::init(tiny(), rng);
  TokenBatch b{2, 6, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 0, 1}};
  AdamState opt;
  for (int i = 0; i < 2; ++i) {
    const Model g = lm_loss(c.model, b).grads;
    auto p = c.model.parameters();
    auto gp = g.parameters();
    adam_step(p, gp, opt, 1e-2);
  }
  SSDConfig sc;
  sc.total_steps = 100;
  sc.monitor_interval = 3;
  SchedulerState st = SchedulerState::start(sc, 2);
  for (std::uint64_t s = 0; s < 3; ++s) advance(st, s);
  if (sparse) {
    EXPECT_TRUE(on_monitor(st, 0.95, 2, rng));
    const std::vector<Partition> parts{Partition::random_balanced(16, 4, rng), Partition::random_balanced(16, 4, rng)};
    transition_dense_to_sparse(c.model, opt, st, parts, 2);
    st.events.back().loss_before = 2.25;
    st.events.back().loss_after = 2.25;
  }
  c.optimizer = opt;
  c.scheduler = st;
  c.step = 3;
  c.seed = 7;
  c.cumulative_flops = 123456789;
  c.rng_state = rng.serialize();
  return c;
}

void expect_same(const Checkpoint& a, const Checkpoint& b) {
  EXPECT_EQ(a.model.config, b.model.config);
  EXPECT_EQ(a.model.parameter_values(), b.model.parameter_values());
  EXPECT_EQ(a.model.any_sparse(), b.model.any_sparse());
  for (std::size_t l = 0; l < a.model.blocks.size(); ++l) {
    if (!a.model.blocks[l].is_sparse()) continue;
    const auto& sa = std::get<SMoEFFN>(a.model.blocks[l].ffn);
    const auto& sb = std::get<SMoEFFN>(b.model.blocks[l].ffn);
    EXPECT_EQ(sa.partition, sb.partition);
    EXPECT_EQ(sa.neurons, sb.neurons);
    EXPECT_EQ(sa.top_k, sb.top_k);
  }
  EXPECT_EQ(a.step, b.step);
  EXPECT_EQ(a.seed, b.seed);
  EXPECT_EQ(a.cumulative_flops, b.cumulative_flops);
  EXPECT_EQ(a.rng_state, b.rng_state);
  ASSERT_EQ(a.optimizer.has_value(), b.optimizer.has_value());
  if (a.optimizer) {
    EXPECT_EQ(a.optimizer->first, b.optimizer->first);
    EXPECT_EQ(a.optimizer->second, b.optimizer->second);
    EXPECT_EQ(a.optimizer->step, b.optimizer->step);
  }
  EXPECT_EQ(a.scheduler, b.scheduler);
}

TEST(Checkpoint, DenseRoundTripIsBitIdentical) {
  const Checkpoint c = populated(false);
  const std::string bytes = encode_checkpoint(c);
  const Checkpoint back = decode_checkpoint(bytes);
  expect_same(c, back);
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, SparseRoundTripKeepsPartitionsAndMoments) {
  const Checkpoint c = populated(true);
  ASSERT_TRUE(c.model.any_sparse());
  const std::string bytes = encode_checkpoint(c);
  const Checkpoint back = decode_checkpoint(bytes);
  expect_same(c, back);
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, MinimalCheckpoint) {
  Rng rng(1);
  Checkpoint c;
  c.model = Model::init(tiny(), rng);
  const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
  expect_same(c, back);
  EXPECT_FALSE(back.optimizer.has_value());
  EXPECT_FALSE(back.scheduler.has_value());
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "ssdlab_test_ckpt.ssd";
  const Checkpoint c = populated(true);
  save_checkpoint(c, path);
  expect_same(c, load_checkpoint(path));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

TEST(Checkpoint, RejectsCorruption) {
  const std::string good = encode_checkpoint(populated(true));
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  bad = good;
  bad[4] = 9;  // version
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  EXPECT_THROW(decode_checkpoint(good + "x"), CheckpointError);
  for (std::size_t len = 0; len < good.size(); len += 97) {
    EXPECT_THROW(decode_checkpoint(std::string_view(good).substr(0, len)), CheckpointError) << "prefix " << len;
  }
  EXPECT_THROW(decode_checkpoint(std::string_view(good).substr(0, good.size() - 1)), CheckpointError);
}

}  // namespace
}  // namespace ssdlab
