// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atrseq/checkpoint.hpp"
#include "atrseq/corpus.hpp"
#include "atrseq/seq2seq.hpp"

namespace atrseq {

enum class ClipMode { GlobalNorm, PerValue };

struct TrainConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;
  ClipMode clip_mode = ClipMode::GlobalNorm;
  std::size_t batch_size = 80;
  std::size_t max_epochs = 30;
  double lr_decay = 0.5;  // per epoch
  double dropout = 0.2;
  std::size_t max_train_length = 80;
  std::uint64_t seed = 1;
  double target_accuracy = 0.0;  // early stop when > 0 and validation reaches it
  bool checked = false;
  std::size_t bucket_window_batches = 20;
};

void validate(const TrainConfig& cfg);

// Deterministic seed derivation for (run seed, epoch, step) tuples.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

// learning_rate * lr_decay^epoch.
double learning_rate_at(const TrainConfig& cfg, std::uint64_t epoch);

template <typename S>
std::vector<Tensor<S>*> model_slots(Seq2SeqModel<S>& model);

template <typename S>
std::vector<std::string> model_slot_names(const Seq2SeqModel<S>& model);

template <typename S>
AdamState<S> adam_init(const Seq2SeqModel<S>& model);

// Standard Adam with bias correction, applied after clipping. Returns false
// and leaves everything untouched when any gradient is non-finite.
template <typename S>
bool adam_step(const std::vector<Tensor<S>*>& params, const std::vector<Tensor<S>>& grads,
               AdamState<S>& state, double lr, const TrainConfig& cfg);

// Scales all gradients by max_norm / norm when the global L2 norm exceeds
// max_norm; returns the pre-clip norm.
template <typename S>
double clip_global_norm(std::vector<Tensor<S>>& grads, double max_norm);

// Clamps each value into [-max_abs, max_abs]; ablation alternative.
template <typename S>
void clip_per_value(std::vector<Tensor<S>>& grads, double max_abs);

struct TrainSummary {
  std::uint64_t epochs_run = 0;
  std::uint64_t steps = 0;
  std::uint64_t skipped_steps = 0;
  double best_val_accuracy = -1.0;
  double final_val_accuracy = -1.0;
  double final_val_loss = -1.0;
  bool reached_target = false;
  std::string best_checkpoint;
  std::string last_checkpoint;
};

struct TrainResume {
  AdamState<float> moments;
  TrainProgress progress;
};

// Filters over-length pairs, shuffles per epoch with seeded RNG, halves the
// learning rate each epoch, emits JSON-lines metrics ({step, epoch, lr, loss,
// grad_norm} per step; {epoch, metric, value} per validation) and writes per
// epoch plus best-validation checkpoints into run_dir.
TrainSummary train_loop(Seq2SeqModel<float>& model, const ParallelCorpus& train_corpus,
                        const ParallelCorpus& val_corpus, const Vocab& src_vocab,
                        const Vocab& tgt_vocab, const TrainConfig& cfg,
                        const std::string& run_dir, const TrainResume* resume = nullptr);

}  // namespace atrseq
