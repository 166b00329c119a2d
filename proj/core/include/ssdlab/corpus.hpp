// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssdlab/model.hpp"
#include "ssdlab/rng.hpp"

namespace ssdlab {

inline constexpr std::size_t kByteVocabSize = 256;

/// Byte-level tokenizer: each byte is its own token id.
std::vector<std::int32_t> encode_bytes(std::string_view text);
/// Throws std::out_of_range for ids outside [0, 256).
std::string decode_bytes(std::span<const std::int32_t> ids);

struct CorpusConfig {
  std::filesystem::path path;
  double validation_fraction = 0.1;
  /// Input positions per training sequence; batches carry seq_len + 1 tokens.
  std::size_t seq_len = 32;
};

struct DocumentSpan {
  std::uint64_t offset = 0;  // byte offset in the raw file
  std::uint64_t length = 0;
  bool validation = false;

  friend bool operator==(const DocumentSpan&, const DocumentSpan&) = default;
};

/// Enough to rebuild the split from the same file.
struct SplitManifest {
  std::uint64_t source_bytes = 0;
  std::uint64_t source_hash = 0;  // FNV-1a 64 of the raw bytes
  double validation_fraction = 0.0;
  std::vector<DocumentSpan> documents;
  std::uint64_t train_tokens = 0;
  std::uint64_t validation_tokens = 0;

  std::string to_json() const;
  static SplitManifest from_json(std::string_view text);

  friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

struct TokenizedCorpus {
  std::vector<std::int32_t> train;
  std::vector<std::int32_t> validation;
  SplitManifest manifest;
};

/// Documents are runs of text separated by one or more blank lines. Each
/// document is encoded and followed by a newline token in its split's stream.
/// Validation documents are spread evenly: document i belongs to validation when
/// floor((i + 1)·f) > floor(i·f), with at least one when f > 0.
/// Throws std::invalid_argument for an empty corpus, fewer than two documents
/// when f > 0, seq_len > max_seq_len, or a stream too short for one sequence.
TokenizedCorpus tokenize_text(std::string_view text, const CorpusConfig& cfg, std::size_t max_seq_len);
/// Reads cfg.path, then tokenize_text. Throws std::runtime_error if unreadable.
TokenizedCorpus tokenize_corpus(const CorpusConfig& cfg, std::size_t max_seq_len);

/// `batch` windows of seq_len + 1 tokens at uniformly random offsets.
TokenBatch sample_batch(std::span<const std::int32_t> stream, std::size_t batch, std::size_t seq_len, Rng& rng);

/// `count` windows of seq_len + 1 tokens at evenly spaced fixed offsets.
TokenBatch fixed_windows(std::span<const std::int32_t> stream, std::size_t count, std::size_t seq_len);

/// `batch` sequences of seq_len + 1 ids drawn uniformly from [0, vocab_size).
TokenBatch random_token_batch(std::size_t vocab_size, std::size_t batch, std::size_t seq_len, Rng& rng);

/// Add-one smoothed unigram model fit on `train`, scored on the targets of `eval`.
double unigram_perplexity(std::span<const std::int32_t> train, const TokenBatch& eval,
                          std::size_t vocab_size = kByteVocabSize);

/// Repetitive synthetic English-like text of about `bytes` bytes, in documents.
std::string generate_toy_corpus(std::size_t bytes, std::uint64_t seed);

}  // namespace ssdlab
