// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "atrseq/errors.hpp"

namespace atrseq {

using TokenSeq = std::vector<std::string>;

// Token/id mapping with fixed reserved ids.
class Vocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kBos = 2;
  static constexpr std::int32_t kEos = 3;
  static constexpr std::size_t kReserved = 4;

  Vocab();

  // Appends a regular token; returns its id.
  std::int32_t add(const std::string& token);

  std::size_t size() const { return id_to_token_.size(); }
  std::int32_t encode_token(const std::string& token) const;  // kUnk when absent
  std::vector<std::int32_t> encode(const TokenSeq& tokens) const;
  const std::string& decode_token(std::int32_t id) const;
  TokenSeq decode(const std::vector<std::int32_t>& ids, bool strip_reserved = true) const;

  // One regular token per line; line number == id - 4.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  // FNV-1a over the regular token list; identifies the vocabulary in
  // checkpoint metadata.
  std::uint64_t content_hash() const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int32_t> token_to_id_;
};

// Top-(cap - 4) tokens by frequency, ties broken lexicographically.
Vocab build_vocab(const std::vector<TokenSeq>& corpus, std::size_t cap);

struct ParallelCorpus {
  std::vector<TokenSeq> source;
  std::vector<TokenSeq> target;
  std::size_t size() const { return source.size(); }
};

enum class SynthTask { Copy, Reverse, Sort };
SynthTask synth_task_from_string(const std::string& name);

// Random token sequences over an alphabet of `vocab_size - 4` symbols whose
// lexicographic order equals their id order; the target is the transformed
// source with an explicit end token appended.
ParallelCorpus gen_synthetic(SynthTask task, std::size_t vocab_size, std::size_t len_lo,
                             std::size_t len_hi, std::size_t count, std::uint64_t seed);

// The alphabet vocabulary used by gen_synthetic, ids in symbol order.
Vocab synthetic_vocab(std::size_t vocab_size);

// Padded token-id matrices, row-major [size x len]; mask[i*len+j] == 1 iff
// j < length[i], and ids beyond the length equal the pad id.
struct Batch {
  std::size_t size = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<std::int32_t> src, tgt;
  std::vector<std::uint8_t> src_mask, tgt_mask;
  std::vector<std::size_t> src_lengths, tgt_lengths;

  std::int32_t src_at(std::size_t row, std::size_t col) const { return src[row * src_len + col]; }
  std::int32_t tgt_at(std::size_t row, std::size_t col) const { return tgt[row * tgt_len + col]; }
};

struct BatchReport {
  std::size_t pairs_kept = 0;
  std::size_t dropped_overlength = 0;
  std::size_t batches = 0;
};

// Drops over-length pairs, shuffles with the seed, sorts by target length
// inside windows of `window_batches` batches to reduce padding, then packs
// fixed-size batches padded to the per-batch maximum.
std::vector<Batch> make_batches(const ParallelCorpus& corpus, const Vocab& src_vocab,
                                const Vocab& tgt_vocab, std::size_t batch_size,
                                std::size_t max_len, std::uint64_t seed,
                                std::size_t window_batches = 20, BatchReport* report = nullptr);

// Whitespace-tokenized lines of a UTF-8 text file.
std::vector<TokenSeq> read_token_lines(const std::string& path);
void write_token_lines(const std::string& path, const std::vector<TokenSeq>& lines);

}  // namespace atrseq
