// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "atrseq/cells.hpp"
#include "atrseq/corpus.hpp"
#include "atrseq/graph.hpp"

namespace atrseq {

// Encoder-decoder with a bidirectional encoder, additive attention over
// tanh-transformed source states and a two-level decoder. The encoder runs at
// `enc_hidden` per direction; the decoder state width is 2 * enc_hidden so it
// matches the concatenated annotations.
template <typename S>
struct Seq2SeqModel {
  CellVariant variant = CellVariant::ATR;
  std::size_t src_vocab = 0, tgt_vocab = 0;
  std::size_t embed_dim = 0;   // e
  std::size_t enc_hidden = 0;  // d per direction
  std::size_t attn_dim = 0;    // a
  bool bias = false;

  Tensor<S> src_embed, tgt_embed;  // [V x e]
  CellParams<S> enc_fwd, enc_bwd;  // e -> d
  CellParams<S> dec_lvl1;          // e -> 2d
  CellParams<S> dec_lvl2;          // 2d -> 2d
  Tensor<S> attn_W, attn_U;        // [2d x a]
  Tensor<S> attn_v;                // [a x 1]
  Tensor<S> init_W;                // [d x 2d], backward first state -> s0
  Tensor<S> out_W1, out_b1;        // [(e + 4d) x e], [1 x e]
  Tensor<S> out_W2, out_b2;        // [e x V_tgt], [1 x V_tgt]
  std::map<std::string, std::string> notes;

  std::size_t decoder_dim() const { return 2 * enc_hidden; }
  std::size_t parameter_count() const;
  void visit(const std::function<void(const std::string&, Tensor<S>&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor<S>&)>& fn) const;
};

template <typename S>
Seq2SeqModel<S> init_seq2seq(CellVariant variant, std::size_t src_vocab, std::size_t tgt_vocab,
                             std::size_t embed_dim, std::size_t enc_hidden, std::size_t attn_dim,
                             std::mt19937_64& rng, bool bias = false);

// Tracked copy: every slot registered as a graph parameter.
template <typename S>
Seq2SeqModel<S> bind(Graph<S>& graph, const Seq2SeqModel<S>& model);

// Annotations are stored step-major: row (t * batch + b) holds the
// concatenated forward/backward states of position t for batch row b.
template <typename S>
struct EncodeResult {
  Tensor<S> flat;  // [(n * B) x 2d]
  std::size_t batch = 0;
  std::size_t length = 0;
  Tensor<S> bwd_first;  // [B x d], backward state at the first position

  // Detached [B x n x 2d] view in the documented layout.
  Tensor<S> annotations() const;
};

template <typename S>
EncodeResult<S> encode(Graph<S>& g, const Seq2SeqModel<S>& model, const Batch& batch);

// tanh(annotations) and its attention projection, computed once per source.
template <typename S>
struct AttentionPrep {
  Tensor<S> ta;  // [(n * B) x 2d]
  Tensor<S> ua;  // [(n * B) x a]
  std::vector<std::uint8_t> mask;
  std::size_t batch = 0;
  std::size_t length = 0;
};

template <typename S>
AttentionPrep<S> prepare_attention(Graph<S>& g, const Seq2SeqModel<S>& model,
                                   const EncodeResult<S>& enc, const Batch& batch);

template <typename S>
struct AttentionResult {
  Tensor<S> context;  // [B x 2d]
  Tensor<S> alpha;    // [B x n]
};

template <typename S>
AttentionResult<S> attention(Graph<S>& g, const Seq2SeqModel<S>& model, const Tensor<S>& s_tilde,
                             const AttentionPrep<S>& prep);

template <typename S>
struct DecoderState {
  CellState<S> lvl1;
  CellState<S> lvl2;  // lvl2.h is the externally visible state s_j
};

template <typename S>
DecoderState<S> decoder_init(Graph<S>& g, const Seq2SeqModel<S>& model, const EncodeResult<S>& enc);

template <typename S>
struct DecoderStepResult {
  DecoderState<S> state;
  Tensor<S> logits;   // [B x V_tgt]
  Tensor<S> context;  // [B x 2d]
  Tensor<S> alpha;    // [B x n]
};

// One decoder step: level-1 cell over the previous token embedding, attention
// over the source, level-2 cell over the context, then the output layer with
// dropout on its pre-softmax hidden layer in training mode. `trace_level`
// 1 or 2 selects the cell whose gates are recorded into `trace`.
template <typename S>
DecoderStepResult<S> decoder_step(Graph<S>& g, const Seq2SeqModel<S>& model,
                                  const AttentionPrep<S>& prep, const DecoderState<S>& state,
                                  const std::vector<std::int32_t>& prev_tokens, bool training,
                                  double dropout_rate, int trace_level = 0,
                                  StepTrace<S>* trace = nullptr);

// Collected decoder traces for analysis passes.
template <typename S>
struct DecodeTraces {
  int level = 2;
  std::vector<StepTrace<S>> steps;
};

// Teacher-forced cross entropy averaged over unmasked target tokens.
template <typename S>
Tensor<S> sequence_loss(Graph<S>& g, const Seq2SeqModel<S>& model, const Batch& batch,
                        double dropout_rate, bool training, DecodeTraces<S>* traces = nullptr);

// Fraction of unmasked target positions whose teacher-forced argmax matches.
template <typename S>
double token_accuracy(const Seq2SeqModel<S>& model, const Batch& batch);

struct DecodeResult {
  std::vector<std::int32_t> tokens;  // without bos; includes eos when emitted
  double logp = 0;
  double normalized_score() const {
    return tokens.empty() ? 0.0 : logp / static_cast<double>(tokens.size());
  }
};

inline std::size_t default_max_decode_length(std::size_t source_length) {
  return 2 * source_length + 5;
}

template <typename S>
DecodeResult greedy_decode(const Seq2SeqModel<S>& model, const std::vector<std::int32_t>& src_ids,
                           std::size_t max_len, DecodeTraces<S>* traces = nullptr);

// Length-normalized beam search; hypotheses that emit the end token are
// frozen into a finished pool and the pool competes with the still-open beam
// by logp / length.
template <typename S>
DecodeResult beam_search(const Seq2SeqModel<S>& model, const std::vector<std::int32_t>& src_ids,
                         std::size_t beam_size, std::size_t max_len);

extern template struct Seq2SeqModel<float>;
extern template struct Seq2SeqModel<double>;

}  // namespace atrseq
