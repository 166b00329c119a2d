// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssdlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace ssdlab {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'D', '1'};

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint64_t v) {
    if (v > std::numeric_limits<std::uint32_t>::max()) throw CheckpointError("value does not fit in u32");
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void opt_f64(const std::optional<double>& v) {
    u8(v.has_value() ? 1 : 0);
    if (v.has_value()) f64(*v);
  }
  void str(const std::string& s) {
    u32(s.size());
    out_.append(s);
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  void matrix(const Matrix& m) {
    u32(m.rows());
    u32(m.cols());
    for (double v : m.values()) f64(v);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(need(1)[0]); }
  std::uint32_t u32() {
    const char* p = need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const char* p = need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::optional<double> opt_f64() {
    if (flag() == 0) return std::nullopt;
    return f64();
  }
  std::uint8_t flag() {
    const std::uint8_t v = u8();
    if (v > 1) throw CheckpointError("corrupt checkpoint: bad flag byte");
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    const char* p = need(n);
    return std::string(p, n);
  }
  std::string_view raw(std::size_t n) { return {need(n), n}; }
  Matrix matrix() {
    const std::uint32_t rows = u32(), cols = u32();
    const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
    if (count * 8 > remaining()) throw CheckpointError("truncated checkpoint");
    Matrix m(rows, cols);
    for (double& v : m.values()) v = f64();
    return m;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  const char* need(std::size_t n) {
    if (n > remaining()) throw CheckpointError("truncated checkpoint");
    const char* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

void write_partition(ByteWriter& w, const Partition& p) {
  w.u32(p.n_clusters);
  w.u32(p.size());
  for (std::size_t a : p.assignment) w.u32(a);
}

Partition read_partition(ByteReader& r) {
  Partition p;
  p.n_clusters = r.u32();
  const std::uint32_t n = r.u32();
  if (static_cast<std::uint64_t>(n) * 4 > r.remaining()) throw CheckpointError("truncated checkpoint");
  p.assignment.resize(n);
  for (auto& a : p.assignment) a = r.u32();
  if (!p.is_balanced()) throw CheckpointError("corrupt checkpoint: unbalanced partition");
  return p;
}

void write_scheduler(ByteWriter& w, const SchedulerState& s) {
  const SSDConfig& c = s.config;
  w.f64(c.threshold);
  w.f64(c.sparse_ratio);
  w.f64(c.final_dense_ratio);
  w.u64(c.monitor_interval);
  w.u64(c.total_steps);
  w.u8(static_cast<std::uint8_t>(c.policy));
  w.f64(c.random_probability);
  w.u8(static_cast<std::uint8_t>(s.phase));
  w.u64(s.steps_in_phase);
  w.u64(s.last_dense_len);
  w.u64(s.sparse_budget);
  w.u32(s.prev_partitions.size());
  for (const auto& p : s.prev_partitions) {
    w.u8(p.has_value() ? 1 : 0);
    if (p.has_value()) write_partition(w, *p);
  }
  w.u32(s.events.size());
  for (const auto& e : s.events) {
    w.u64(e.step);
    w.u8(static_cast<std::uint8_t>(e.kind));
    w.opt_f64(e.similarity);
    w.u64(e.sparse_budget);
    w.opt_f64(e.loss_before);
    w.opt_f64(e.loss_after);
  }
}

SchedulerState read_scheduler(ByteReader& r) {
  SchedulerState s;
  SSDConfig& c = s.config;
  c.threshold = r.f64();
  c.sparse_ratio = r.f64();
  c.final_dense_ratio = r.f64();
  c.monitor_interval = r.u64();
  c.total_steps = r.u64();
  const std::uint8_t policy = r.u8();
  if (policy > 1) throw CheckpointError("corrupt checkpoint: unknown switch policy");
  c.policy = static_cast<SwitchPolicy>(policy);
  c.random_probability = r.f64();
  const std::uint8_t phase = r.u8();
  if (phase > 2) throw CheckpointError("corrupt checkpoint: unknown phase");
  s.phase = static_cast<Phase>(phase);
  s.steps_in_phase = r.u64();
  s.last_dense_len = r.u64();
  s.sparse_budget = r.u64();
  const std::uint32_t layers = r.u32();
  for (std::uint32_t l = 0; l < layers; ++l) {
    if (r.flag() == 1) {
      s.prev_partitions.emplace_back(read_partition(r));
    } else {
      s.prev_partitions.emplace_back(std::nullopt);
    }
  }
  const std::uint32_t events = r.u32();
  for (std::uint32_t i = 0; i < events; ++i) {
    TransitionEvent e;
    e.step = r.u64();
    const std::uint8_t kind = r.u8();
    if (kind > 2) throw CheckpointError("corrupt checkpoint: unknown transition kind");
    e.kind = static_cast<TransitionKind>(kind);
    e.similarity = r.opt_f64();
    e.sparse_budget = r.u64();
    e.loss_before = r.opt_f64();
    e.loss_after = r.opt_f64();
    s.events.push_back(e);
  }
  return s;
}

struct SparseLayout {
  bool sparse = false;
  std::size_t top_k = 0;
  Partition partition;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  const Model& model = c.model;
  const ModelConfig& cfg = model.config;

  std::vector<SparseLayout> layout;
  for (const auto& blk : model.blocks) {
    if (const auto* s = std::get_if<SMoEFFN>(&blk.ffn)) {
      layout.push_back({true, s->top_k, s->partition});
    } else {
      layout.push_back({});
    }
  }
  Model dense = model;
  std::optional<AdamState> opt = c.optimizer;
  densify_model(dense, opt.has_value() ? &*opt : nullptr);

  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(cfg.n_layers);
  w.u32(cfg.d_model);
  w.u32(cfg.n_heads);
  w.u32(cfg.d_ff);
  w.u32(cfg.vocab_size);
  w.u32(cfg.max_seq_len);
  w.f64(cfg.ln_eps);
  w.f64(cfg.init_std);
  w.u64(c.step);
  w.u64(c.seed);
  w.u64(c.cumulative_flops);
  w.str(c.rng_state);
  for (const Matrix* p : std::as_const(dense).parameters()) w.matrix(*p);
  for (const auto& l : layout) {
    w.u8(l.sparse ? 1 : 0);
    if (!l.sparse) continue;
    w.u32(l.top_k);
    w.u32(l.partition.n_clusters);
    for (std::size_t a : l.partition.assignment) w.u32(a);
  }
  w.u8(opt.has_value() ? 1 : 0);
  if (opt.has_value()) {
    w.f64(opt->config.beta1);
    w.f64(opt->config.beta2);
    w.f64(opt->config.eps);
    w.u64(opt->step);
    const bool initialized = !opt->first.empty();
    w.u8(initialized ? 1 : 0);
    if (initialized) {
      for (const Matrix& m : opt->first) w.matrix(m);
      for (const Matrix& m : opt->second) w.matrix(m);
    }
  }
  w.u8(c.scheduler.has_value() ? 1 : 0);
  if (c.scheduler.has_value()) write_scheduler(w, *c.scheduler);
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.remaining() < 4 || std::memcmp(r.raw(4).data(), kMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint: bad magic tag");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  ModelConfig cfg;
  cfg.n_layers = r.u32();
  cfg.d_model = r.u32();
  cfg.n_heads = r.u32();
  cfg.d_ff = r.u32();
  cfg.vocab_size = r.u32();
  cfg.max_seq_len = r.u32();
  cfg.ln_eps = r.f64();
  cfg.init_std = r.f64();
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("corrupt checkpoint config: ") + e.what());
  }

  Checkpoint c;
  c.step = r.u64();
  c.seed = r.u64();
  c.cumulative_flops = r.u64();
  c.rng_state = r.str();

  // Build the dense layout without drawing random weights, then overwrite.
  Model& m = c.model;
  m.config = cfg;
  const std::size_t d = cfg.d_model;
  m.tok_emb = Matrix(cfg.vocab_size, d);
  m.pos_emb = Matrix(cfg.max_seq_len, d);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    TransformerBlock b;
    b.ln1_gain = Matrix(1, d);
    b.ln1_bias = Matrix(1, d);
    b.attn = {Matrix(d, d), Matrix(1, d), Matrix(d, d), Matrix(1, d),
              Matrix(d, d), Matrix(1, d), Matrix(d, d), Matrix(1, d)};
    b.ln2_gain = Matrix(1, d);
    b.ln2_bias = Matrix(1, d);
    b.ffn = FFNWeights::zeros(d, cfg.d_ff);
    m.blocks.push_back(std::move(b));
  }
  m.lnf_gain = Matrix(1, d);
  m.lnf_bias = Matrix(1, d);
  m.head_w = Matrix(cfg.vocab_size, d);
  m.head_b = Matrix(1, cfg.vocab_size);

  auto read_tensors = [&](const Model& shape) {
    std::vector<Matrix> values;
    for (const Matrix* p : shape.parameters()) {
      Matrix t = r.matrix();
      if (!t.same_shape(*p)) {
        throw CheckpointError("corrupt checkpoint: tensor " + std::to_string(values.size()) + " is " +
                              shape_string(t) + ", expected " + shape_string(*p));
      }
      values.push_back(std::move(t));
    }
    return values;
  };
  m.assign_parameters(read_tensors(m));

  std::vector<SparseLayout> layout(cfg.n_layers);
  for (auto& l : layout) {
    l.sparse = r.flag() == 1;
    if (!l.sparse) continue;
    l.top_k = r.u32();
    l.partition.n_clusters = r.u32();
    if (static_cast<std::uint64_t>(cfg.d_ff) * 4 > r.remaining()) throw CheckpointError("truncated checkpoint");
    l.partition.assignment.resize(cfg.d_ff);
    for (auto& a : l.partition.assignment) a = r.u32();
    if (!l.partition.is_balanced() || l.top_k < 1 || l.top_k > l.partition.n_clusters) {
      throw CheckpointError("corrupt checkpoint: invalid expert layout");
    }
  }

  if (r.flag() == 1) {
    AdamState opt;
    opt.config.beta1 = r.f64();
    opt.config.beta2 = r.f64();
    opt.config.eps = r.f64();
    opt.step = r.u64();
    if (r.flag() == 1) {
      opt.first = read_tensors(m);
      opt.second = read_tensors(m);
    }
    c.optimizer = std::move(opt);
  }
  if (r.flag() == 1) c.scheduler = read_scheduler(r);
  if (r.remaining() != 0) throw CheckpointError("corrupt checkpoint: trailing bytes");

  std::size_t n_sparse = 0;
  for (const auto& l : layout) n_sparse += l.sparse ? 1 : 0;
  if (n_sparse != 0) {
    if (n_sparse != layout.size()) throw CheckpointError("checkpoint mixes dense and sparse layers");
    std::vector<Partition> parts;
    for (const auto& l : layout) {
      if (l.top_k != layout.front().top_k) throw CheckpointError("checkpoint layers disagree on top_k");
      parts.push_back(l.partition);
    }
    sparsify_model(m, parts, layout.front().top_k, c.optimizer.has_value() ? &*c.optimizer : nullptr);
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace ssdlab
