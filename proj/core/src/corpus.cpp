// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssdlab/corpus.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "json.hpp"

namespace ssdlab {

namespace {

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool is_blank(std::string_view line) {
  for (char c : line) {
    if (c != ' ' && c != '\t' && c != '\r') return false;
  }
  return true;
}

std::vector<DocumentSpan> find_documents(std::string_view text) {
  std::vector<DocumentSpan> docs;
  std::size_t pos = 0;
  bool open = false;
  std::size_t start = 0, end = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    const std::size_t line_end = nl == std::string_view::npos ? text.size() : nl;
    const std::string_view line = text.substr(pos, line_end - pos);
    if (is_blank(line)) {
      if (open) docs.push_back({start, end - start, false});
      open = false;
    } else {
      if (!open) start = pos;
      open = true;
      end = line_end;
    }
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
  }
  if (open) docs.push_back({start, end - start, false});
  return docs;
}

}  // namespace

std::vector<std::int32_t> encode_bytes(std::string_view text) {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<std::int32_t>(c));
  return ids;
}

std::string decode_bytes(std::span<const std::int32_t> ids) {
  std::string out;
  out.reserve(ids.size());
  for (std::int32_t id : ids) {
    if (id < 0 || id >= static_cast<std::int32_t>(kByteVocabSize)) {
      throw std::out_of_range("token id " + std::to_string(id) + " is not a byte");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

std::string SplitManifest::to_json() const {
  nlohmann::ordered_json j;
  j["source_bytes"] = source_bytes;
  j["source_hash"] = source_hash;
  j["validation_fraction"] = validation_fraction;
  j["train_tokens"] = train_tokens;
  j["validation_tokens"] = validation_tokens;
  auto docs = nlohmann::ordered_json::array();
  for (const auto& d : documents) docs.push_back({d.offset, d.length, d.validation});
  j["documents"] = std::move(docs);
  return j.dump();
}

SplitManifest SplitManifest::from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  SplitManifest m;
  m.source_bytes = j.at("source_bytes").get<std::uint64_t>();
  m.source_hash = j.at("source_hash").get<std::uint64_t>();
  m.validation_fraction = j.at("validation_fraction").get<double>();
  m.train_tokens = j.at("train_tokens").get<std::uint64_t>();
  m.validation_tokens = j.at("validation_tokens").get<std::uint64_t>();
  for (const auto& d : j.at("documents")) {
    m.documents.push_back({d.at(0).get<std::uint64_t>(), d.at(1).get<std::uint64_t>(), d.at(2).get<bool>()});
  }
  return m;
}

TokenizedCorpus tokenize_text(std::string_view text, const CorpusConfig& cfg, std::size_t max_seq_len) {
  if (cfg.seq_len == 0) throw std::invalid_argument("corpus: sequence length must be positive");
  if (cfg.seq_len > max_seq_len) {
    throw std::invalid_argument("corpus: sequence length " + std::to_string(cfg.seq_len) + " exceeds max_seq_len " +
                                std::to_string(max_seq_len));
  }
  if (!(cfg.validation_fraction >= 0.0 && cfg.validation_fraction < 1.0)) {
    throw std::invalid_argument("corpus: validation fraction must lie in [0, 1)");
  }
  TokenizedCorpus out;
  SplitManifest& m = out.manifest;
  m.source_bytes = text.size();
  m.source_hash = fnv1a64(text);
  m.validation_fraction = cfg.validation_fraction;
  m.documents = find_documents(text);
  const std::size_t n = m.documents.size();
  if (n == 0) throw std::invalid_argument("corpus: empty corpus");

  const double f = cfg.validation_fraction;
  std::size_t n_val = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool val = std::floor(static_cast<double>(i + 1) * f) > std::floor(static_cast<double>(i) * f);
    m.documents[i].validation = val;
    n_val += val ? 1 : 0;
  }
  if (f > 0.0 && n_val == 0) {
    if (n < 2) throw std::invalid_argument("corpus: a validation split needs at least two documents");
    m.documents.back().validation = true;
  }

  for (const auto& d : m.documents) {
    auto& stream = d.validation ? out.validation : out.train;
    const auto ids = encode_bytes(text.substr(d.offset, d.length));
    stream.insert(stream.end(), ids.begin(), ids.end());
    stream.push_back('\n');
  }
  m.train_tokens = out.train.size();
  m.validation_tokens = out.validation.size();
  if (out.train.size() < cfg.seq_len + 1) throw std::invalid_argument("corpus: training split shorter than one sequence");
  if (f > 0.0 && out.validation.size() < cfg.seq_len + 1) {
    throw std::invalid_argument("corpus: validation split shorter than one sequence");
  }
  return out;
}

TokenizedCorpus tokenize_corpus(const CorpusConfig& cfg, std::size_t max_seq_len) {
  std::ifstream in(cfg.path, std::ios::binary);
  if (!in) throw std::runtime_error("corpus: cannot read " + cfg.path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return tokenize_text(text, cfg, max_seq_len);
}

TokenBatch sample_batch(std::span<const std::int32_t> stream, std::size_t batch, std::size_t seq_len, Rng& rng) {
  const std::size_t window = seq_len + 1;
  if (stream.size() < window) throw std::invalid_argument("sample_batch: stream shorter than one sequence");
  TokenBatch b{batch, window, {}};
  b.ids.reserve(batch * window);
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t off = rng.index(stream.size() - window + 1);
    b.ids.insert(b.ids.end(), stream.begin() + static_cast<std::ptrdiff_t>(off),
                 stream.begin() + static_cast<std::ptrdiff_t>(off + window));
  }
  return b;
}

TokenBatch fixed_windows(std::span<const std::int32_t> stream, std::size_t count, std::size_t seq_len) {
  const std::size_t window = seq_len + 1;
  if (stream.size() < window) throw std::invalid_argument("fixed_windows: stream shorter than one sequence");
  if (count == 0) throw std::invalid_argument("fixed_windows: count must be positive");
  TokenBatch b{count, window, {}};
  b.ids.reserve(count * window);
  const std::size_t span = stream.size() - window;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t off = count == 1 ? 0 : i * span / (count - 1);
    b.ids.insert(b.ids.end(), stream.begin() + static_cast<std::ptrdiff_t>(off),
                 stream.begin() + static_cast<std::ptrdiff_t>(off + window));
  }
  return b;
}

TokenBatch random_token_batch(std::size_t vocab_size, std::size_t batch, std::size_t seq_len, Rng& rng) {
  if (vocab_size == 0) throw std::invalid_argument("random_token_batch: empty vocabulary");
  TokenBatch b{batch, seq_len + 1, {}};
  b.ids.resize(batch * (seq_len + 1));
  for (auto& id : b.ids) id = static_cast<std::int32_t>(rng.index(vocab_size));
  return b;
}

double unigram_perplexity(std::span<const std::int32_t> train, const TokenBatch& eval, std::size_t vocab_size) {
  std::vector<double> counts(vocab_size, 1.0);
  for (std::int32_t t : train) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) throw std::out_of_range("unigram: id outside vocabulary");
    counts[static_cast<std::size_t>(t)] += 1.0;
  }
  const double total = static_cast<double>(train.size() + vocab_size);
  double nll = 0.0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < eval.batch; ++b) {
    const auto seq = eval.sequence(b);
    for (std::size_t t = 1; t < seq.size(); ++t) {
      nll -= std::log(counts.at(static_cast<std::size_t>(seq[t])) / total);
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("unigram: nothing to score");
  return std::exp(nll / static_cast<double>(n));
}

std::string generate_toy_corpus(std::size_t bytes, std::uint64_t seed) {
  static constexpr std::array<const char*, 8> kNouns = {"cat", "dog", "bird", "fox", "child", "farmer", "horse", "king"};
  static constexpr std::array<const char*, 6> kAdjectives = {"small", "old", "red", "quiet", "happy", "brown"};
  static constexpr std::array<const char*, 6> kVerbs = {"sees", "likes", "follows", "finds", "helps", "watches"};
  static constexpr std::array<const char*, 4> kPlaces = {"in the field", "by the river", "at home", "near the hill"};
  Rng rng(seed);
  auto pick = [&rng](const auto& list) { return std::string(list[rng.index(list.size())]); };

  std::string out;
  while (out.size() < bytes) {
    const std::size_t sentences = 3 + rng.index(5);
    for (std::size_t s = 0; s < sentences; ++s) {
      std::string line = "the " + pick(kAdjectives) + " " + pick(kNouns) + " " + pick(kVerbs) + " the " + pick(kNouns);
      if (rng.bernoulli(0.5)) line += " " + pick(kPlaces);
      line += ".\n";
      out += line;
    }
    out += "\n";
  }
  return out;
}

}  // namespace ssdlab
