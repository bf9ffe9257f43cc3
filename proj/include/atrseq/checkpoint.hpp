// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "atrseq/seq2seq.hpp"

namespace atrseq {

// Binary model snapshot. Layout, all integers little-endian:
//   magic "ATRC" | u32 version | u32 metadata bytes | metadata UTF-8 JSON |
//   u32 tensor count | per tensor: u32 name length, name bytes, u32 ndim,
//   u32 dims..., 32-bit float data.
// Tensors are stored as 32-bit floats regardless of compute precision;
// save -> load -> save is byte-identical.
struct Checkpoint {
  nlohmann::json metadata;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

template <typename S>
struct AdamState {
  std::vector<Tensor<S>> m, v;
  std::int64_t step = 0;
};

struct TrainProgress {
  std::uint64_t epoch = 0;  // epochs completed
  std::uint64_t step = 0;   // optimizer steps taken
  std::string rng_state;
};

// Model (and optionally optimizer moments) -> checkpoint. Vocabulary hashes
// go into the metadata so a checkpoint refuses to run with the wrong vocabs.
Checkpoint to_checkpoint(const Seq2SeqModel<float>& model, const AdamState<float>* moments,
                         const TrainProgress& progress, std::uint64_t src_vocab_hash,
                         std::uint64_t tgt_vocab_hash);

Seq2SeqModel<float> model_from_checkpoint(const Checkpoint& ckpt);
AdamState<float> moments_from_checkpoint(const Checkpoint& ckpt, const Seq2SeqModel<float>& model);
TrainProgress progress_from_checkpoint(const Checkpoint& ckpt);

// Throws CheckpointError when the stored hash disagrees.
void verify_vocab_hashes(const Checkpoint& ckpt, const Vocab& src_vocab, const Vocab& tgt_vocab);

}  // namespace atrseq
