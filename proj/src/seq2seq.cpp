// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#include "atrseq/seq2seq.hpp"

#include <algorithm>
#include <cmath>

namespace atrseq {

template <typename S>
void Seq2SeqModel<S>::visit(const std::function<void(const std::string&, Tensor<S>&)>& fn) {
  fn("src_embed", src_embed);
  fn("tgt_embed", tgt_embed);
  auto cell = [&fn](const std::string& prefix, CellParams<S>& params) {
    params.visit([&](const std::string& name, Tensor<S>& t) { fn(prefix + "." + name, t); });
  };
  cell("enc_fwd", enc_fwd);
  cell("enc_bwd", enc_bwd);
  cell("dec_lvl1", dec_lvl1);
  cell("dec_lvl2", dec_lvl2);
  fn("attn.W", attn_W);
  fn("attn.U", attn_U);
  fn("attn.v", attn_v);
  fn("dec_init.W", init_W);
  fn("out.W1", out_W1);
  fn("out.b1", out_b1);
  fn("out.W2", out_W2);
  fn("out.b2", out_b2);
}

template <typename S>
void Seq2SeqModel<S>::visit(const std::function<void(const std::string&, const Tensor<S>&)>& fn) const {
  const_cast<Seq2SeqModel<S>*>(this)->visit(
      [&fn](const std::string& name, Tensor<S>& t) { fn(name, t); });
}

template <typename S>
std::size_t Seq2SeqModel<S>::parameter_count() const {
  std::size_t n = 0;
  visit([&n](const std::string&, const Tensor<S>& t) { n += t.numel(); });
  return n;
}

template <typename S>
Seq2SeqModel<S> init_seq2seq(CellVariant variant, std::size_t src_vocab, std::size_t tgt_vocab,
                             std::size_t embed_dim, std::size_t enc_hidden, std::size_t attn_dim,
                             std::mt19937_64& rng, bool bias) {
  if (src_vocab == 0 || tgt_vocab == 0 || embed_dim == 0 || enc_hidden == 0 || attn_dim == 0) {
    throw ConfigError("seq2seq dimensions must all be positive");
  }
  Seq2SeqModel<S> m;
  m.variant = variant;
  m.src_vocab = src_vocab;
  m.tgt_vocab = tgt_vocab;
  m.embed_dim = embed_dim;
  m.enc_hidden = enc_hidden;
  m.attn_dim = attn_dim;
  m.bias = bias;
  const S lo = S(-0.08), hi = S(0.08);
  const std::size_t dd = m.decoder_dim();
  m.src_embed = Tensor<S>::uniform({src_vocab, embed_dim}, lo, hi, rng);
  m.tgt_embed = Tensor<S>::uniform({tgt_vocab, embed_dim}, lo, hi, rng);
  m.enc_fwd = init_params<S>(variant, embed_dim, enc_hidden, rng, bias);
  m.enc_bwd = init_params<S>(variant, embed_dim, enc_hidden, rng, bias);
  m.dec_lvl1 = init_params<S>(variant, embed_dim, dd, rng, bias);
  m.dec_lvl2 = init_params<S>(variant, dd, dd, rng, bias);
  m.attn_W = Tensor<S>::uniform({dd, attn_dim}, lo, hi, rng);
  m.attn_U = Tensor<S>::uniform({dd, attn_dim}, lo, hi, rng);
  m.attn_v = Tensor<S>::uniform({attn_dim, 1}, lo, hi, rng);
  m.init_W = Tensor<S>::uniform({enc_hidden, dd}, lo, hi, rng);
  m.out_W1 = Tensor<S>::uniform({embed_dim + 2 * dd, embed_dim}, lo, hi, rng);
  m.out_b1 = Tensor<S>::uniform({1, embed_dim}, lo, hi, rng);
  m.out_W2 = Tensor<S>::uniform({embed_dim, tgt_vocab}, lo, hi, rng);
  m.out_b2 = Tensor<S>::uniform({1, tgt_vocab}, lo, hi, rng);
  m.notes["attention.energy"] = "tanh(annotation)";
  m.notes["attention.context"] = "tanh(annotation)";
  return m;
}

template <typename S>
Seq2SeqModel<S> bind(Graph<S>& graph, const Seq2SeqModel<S>& model) {
  Seq2SeqModel<S> bound = model;
  bound.visit([&graph](const std::string&, Tensor<S>& t) { t = graph.parameter(std::move(t)); });
  return bound;
}

namespace {

// Column `col` of a row-major [rows x stride] id matrix.
std::vector<std::int32_t> id_column(const std::vector<std::int32_t>& ids, std::size_t rows,
                                    std::size_t stride, std::size_t col) {
  std::vector<std::int32_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = ids[r * stride + col];
  return out;
}

// Constant [B x width] tensors carrying the mask column and its complement.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> mask_column(const std::vector<std::uint8_t>& mask,
                                            std::size_t rows, std::size_t stride, std::size_t col,
                                            std::size_t width) {
  Tensor<S> keep = Tensor<S>::zeros({rows, width});
  Tensor<S> drop = Tensor<S>::zeros({rows, width});
  for (std::size_t r = 0; r < rows; ++r) {
    const S m = mask[r * stride + col] ? S(1) : S(0);
    for (std::size_t j = 0; j < width; ++j) {
      keep.data[r * width + j] = m;
      drop.data[r * width + j] = S(1) - m;
    }
  }
  return {keep, drop};
}

// new_state where the mask column is set, previous state elsewhere.
template <typename S>
CellState<S> masked_mix(Graph<S>& g, const CellState<S>& prev, const CellState<S>& next,
                        const Tensor<S>& keep, const Tensor<S>& drop) {
  CellState<S> out;
  out.h = g.add(g.mul(next.h, keep), g.mul(prev.h, drop));
  if (next.c.numel() > 0) out.c = g.add(g.mul(next.c, keep), g.mul(prev.c, drop));
  return out;
}

}  // namespace

template <typename S>
Tensor<S> EncodeResult<S>::annotations() const {
  const std::size_t width = flat.cols();
  Tensor<S> out = Tensor<S>::zeros({batch, length, width});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < length; ++t) {
      const S* src = flat.data.data() + (t * batch + b) * width;
      S* dst = out.data.data() + (b * length + t) * width;
      std::copy_n(src, width, dst);
    }
  }
  return out;
}

template <typename S>
EncodeResult<S> encode(Graph<S>& g, const Seq2SeqModel<S>& model, const Batch& batch) {
  const std::size_t B = batch.size, n = batch.src_len;
  if (B == 0 || n == 0) throw ContractError("encode: empty source batch");
  const std::size_t d = model.enc_hidden;

  std::vector<Tensor<S>> x(n);
  for (std::size_t t = 0; t < n; ++t) {
    x[t] = g.rows(model.src_embed, id_column(batch.src, B, n, t));
  }

  std::vector<Tensor<S>> fwd(n), bwd(n);
  CellState<S> state = zero_state<S>(model.variant, B, d);
  for (std::size_t t = 0; t < n; ++t) {
    auto [keep, drop] = mask_column<S>(batch.src_mask, B, n, t, d);
    CellState<S> next = cell_step(g, model.enc_fwd, state, x[t]);
    state = masked_mix(g, state, next, keep, drop);
    fwd[t] = state.h;
  }
  state = zero_state<S>(model.variant, B, d);
  for (std::size_t t = n; t-- > 0;) {
    auto [keep, drop] = mask_column<S>(batch.src_mask, B, n, t, d);
    CellState<S> next = cell_step(g, model.enc_bwd, state, x[t]);
    state = masked_mix(g, state, next, keep, drop);
    bwd[t] = state.h;
  }

  std::vector<Tensor<S>> per_step(n);
  for (std::size_t t = 0; t < n; ++t) per_step[t] = g.concat_cols({fwd[t], bwd[t]});

  EncodeResult<S> out;
  out.flat = g.concat_rows(per_step);
  out.batch = B;
  out.length = n;
  out.bwd_first = bwd[0];
  return out;
}

template <typename S>
AttentionPrep<S> prepare_attention(Graph<S>& g, const Seq2SeqModel<S>& model,
                                   const EncodeResult<S>& enc, const Batch& batch) {
  AttentionPrep<S> prep;
  prep.ta = g.tanh(enc.flat);
  prep.ua = g.matmul(prep.ta, model.attn_U);
  prep.mask = batch.src_mask;
  prep.batch = enc.batch;
  prep.length = enc.length;
  return prep;
}

template <typename S>
AttentionResult<S> attention(Graph<S>& g, const Seq2SeqModel<S>& model, const Tensor<S>& s_tilde,
                             const AttentionPrep<S>& prep) {
  const std::size_t B = prep.batch, n = prep.length;
  Tensor<S> ws = g.matmul(s_tilde, model.attn_W);            // [B x a]
  Tensor<S> act = g.tanh(g.add(prep.ua, g.tile_rows(ws, n)));  // [(n*B) x a]
  Tensor<S> energy = g.matmul(act, model.attn_v);            // [(n*B) x 1]
  Tensor<S> e_bn = g.transpose(g.reshape(energy, {n, B}));   // [B x n]
  AttentionResult<S> out;
  out.alpha = g.masked_softmax(e_bn, prep.mask);
  out.context = g.block_weighted_sum(out.alpha, prep.ta);
  return out;
}

template <typename S>
DecoderState<S> decoder_init(Graph<S>& g, const Seq2SeqModel<S>& model,
                             const EncodeResult<S>& enc) {
  DecoderState<S> state;
  state.lvl1 = zero_state<S>(model.variant, enc.batch, model.decoder_dim());
  state.lvl2 = zero_state<S>(model.variant, enc.batch, model.decoder_dim());
  state.lvl2.h = g.tanh(g.matmul(enc.bwd_first, model.init_W));
  return state;
}

template <typename S>
DecoderStepResult<S> decoder_step(Graph<S>& g, const Seq2SeqModel<S>& model,
                                  const AttentionPrep<S>& prep, const DecoderState<S>& state,
                                  const std::vector<std::int32_t>& prev_tokens, bool training,
                                  double dropout_rate, int trace_level, StepTrace<S>* trace) {
  Tensor<S> y = g.rows(model.tgt_embed, prev_tokens);

  CellState<S> in1{state.lvl2.h, state.lvl1.c};
  CellState<S> st1 = cell_step(g, model.dec_lvl1, in1, y, trace_level == 1 ? trace : nullptr);
  const Tensor<S>& s_tilde = st1.h;

  AttentionResult<S> att = attention(g, model, s_tilde, prep);

  CellState<S> in2{s_tilde, state.lvl2.c};
  CellState<S> st2 = cell_step(g, model.dec_lvl2, in2, att.context, trace_level == 2 ? trace : nullptr);

  Tensor<S> readout = g.concat_cols({y, g.tanh(st2.h), att.context});
  Tensor<S> hidden = g.tanh(g.add(g.matmul(readout, model.out_W1), model.out_b1));
  hidden = g.dropout(hidden, dropout_rate, training);
  Tensor<S> logits = g.add(g.matmul(hidden, model.out_W2), model.out_b2);

  DecoderStepResult<S> out;
  out.state = DecoderState<S>{st1, st2};
  out.logits = logits;
  out.context = att.context;
  out.alpha = att.alpha;
  return out;
}

template <typename S>
Tensor<S> sequence_loss(Graph<S>& g, const Seq2SeqModel<S>& model, const Batch& batch,
                        double dropout_rate, bool training, DecodeTraces<S>* traces) {
  const std::size_t B = batch.size, m = batch.tgt_len;
  if (m == 0) throw ContractError("sequence_loss: empty target batch");
  EncodeResult<S> enc = encode(g, model, batch);
  AttentionPrep<S> prep = prepare_attention(g, model, enc, batch);
  DecoderState<S> state = decoder_init(g, model, enc);

  std::vector<Tensor<S>> step_logits(m);
  std::vector<std::int32_t> prev(B, Vocab::kBos);
  for (std::size_t j = 0; j < m; ++j) {
    StepTrace<S> step_trace;
    StepTrace<S>* tp = traces ? &step_trace : nullptr;
    auto res = decoder_step(g, model, prep, state, prev, training, dropout_rate,
                            traces ? traces->level : 0, tp);
    if (traces) traces->steps.push_back(std::move(step_trace));
    state = res.state;
    step_logits[j] = res.logits;
    prev = id_column(batch.tgt, B, m, j);  // teacher forcing
  }

  Tensor<S> stacked = g.concat_rows(step_logits);  // [(m*B) x V], step-major
  std::vector<std::int32_t> targets(m * B);
  std::vector<std::uint8_t> mask(m * B);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t b = 0; b < B; ++b) {
      targets[j * B + b] = batch.tgt[b * m + j];
      mask[j * B + b] = batch.tgt_mask[b * m + j];
    }
  }
  return g.softmax_xent(stacked, targets, mask);
}

template <typename S>
double token_accuracy(const Seq2SeqModel<S>& model, const Batch& batch) {
  GraphOptions opt;
  opt.recording = false;
  opt.checked = false;
  Graph<S> g(opt);
  const std::size_t B = batch.size, m = batch.tgt_len;
  EncodeResult<S> enc = encode(g, model, batch);
  AttentionPrep<S> prep = prepare_attention(g, model, enc, batch);
  DecoderState<S> state = decoder_init(g, model, enc);

  std::size_t correct = 0, total = 0;
  std::vector<std::int32_t> prev(B, Vocab::kBos);
  for (std::size_t j = 0; j < m; ++j) {
    auto res = decoder_step(g, model, prep, state, prev, false, 0.0);
    state = res.state;
    const std::size_t v = res.logits.cols();
    for (std::size_t b = 0; b < B; ++b) {
      if (!batch.tgt_mask[b * m + j]) continue;
      const S* row = res.logits.data.data() + b * v;
      std::size_t best = 0;
      for (std::size_t k = 1; k < v; ++k) {
        if (row[k] > row[best]) best = k;
      }
      ++total;
      if (static_cast<std::int32_t>(best) == batch.tgt[b * m + j]) ++correct;
    }
    prev = id_column(batch.tgt, B, m, j);
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

// Source batch of one sequence.
Batch single_source(const std::vector<std::int32_t>& src_ids) {
  Batch b;
  b.size = 1;
  b.src_len = src_ids.size();
  b.tgt_len = 0;
  b.src = src_ids;
  b.src_mask.assign(src_ids.size(), 1);
  b.src_lengths.push_back(src_ids.size());
  return b;
}

std::vector<double> log_softmax_row(const float* row, std::size_t v) {
  std::vector<double> out(v);
  double mx = row[0];
  for (std::size_t i = 1; i < v; ++i) mx = std::max(mx, static_cast<double>(row[i]));
  double denom = 0;
  for (std::size_t i = 0; i < v; ++i) denom += std::exp(static_cast<double>(row[i]) - mx);
  const double lz = mx + std::log(denom);
  for (std::size_t i = 0; i < v; ++i) out[i] = static_cast<double>(row[i]) - lz;
  return out;
}

std::vector<double> log_softmax_row(const double* row, std::size_t v) {
  std::vector<double> out(v);
  double mx = row[0];
  for (std::size_t i = 1; i < v; ++i) mx = std::max(mx, row[i]);
  double denom = 0;
  for (std::size_t i = 0; i < v; ++i) denom += std::exp(row[i] - mx);
  const double lz = mx + std::log(denom);
  for (std::size_t i = 0; i < v; ++i) out[i] = row[i] - lz;
  return out;
}

}  // namespace

template <typename S>
DecodeResult greedy_decode(const Seq2SeqModel<S>& model, const std::vector<std::int32_t>& src_ids,
                           std::size_t max_len, DecodeTraces<S>* traces) {
  if (max_len == 0) throw ConfigError("greedy_decode: max_len must be positive");
  GraphOptions opt;
  opt.recording = false;
  opt.checked = false;
  Graph<S> g(opt);
  Batch batch = single_source(src_ids);
  EncodeResult<S> enc = encode(g, model, batch);
  AttentionPrep<S> prep = prepare_attention(g, model, enc, batch);
  DecoderState<S> state = decoder_init(g, model, enc);

  DecodeResult result;
  std::vector<std::int32_t> prev{Vocab::kBos};
  for (std::size_t t = 0; t < max_len; ++t) {
    StepTrace<S> step_trace;
    auto res = decoder_step(g, model, prep, state, prev, false, 0.0,
                            traces ? traces->level : 0, traces ? &step_trace : nullptr);
    if (traces) traces->steps.push_back(std::move(step_trace));
    state = res.state;
    auto lp = log_softmax_row(res.logits.data.data(), res.logits.cols());
    std::size_t best = 0;
    for (std::size_t k = 1; k < lp.size(); ++k) {
      if (lp[k] > lp[best]) best = k;
    }
    result.tokens.push_back(static_cast<std::int32_t>(best));
    result.logp += lp[best];
    if (static_cast<std::int32_t>(best) == Vocab::kEos) break;
    prev = {static_cast<std::int32_t>(best)};
  }
  return result;
}

template <typename S>
DecodeResult beam_search(const Seq2SeqModel<S>& model, const std::vector<std::int32_t>& src_ids,
                         std::size_t beam_size, std::size_t max_len) {
  if (beam_size == 0) throw ConfigError("beam_search: beam size must be positive");
  if (max_len == 0) throw ConfigError("beam_search: max_len must be positive");
  GraphOptions opt;
  opt.recording = false;
  opt.checked = false;
  Graph<S> g(opt);
  Batch batch = single_source(src_ids);
  EncodeResult<S> enc = encode(g, model, batch);
  AttentionPrep<S> prep = prepare_attention(g, model, enc, batch);

  struct Hyp {
    std::vector<std::int32_t> tokens;
    double logp = 0;
    DecoderState<S> state;
  };
  std::vector<Hyp> live{Hyp{{}, 0.0, decoder_init(g, model, enc)}};
  std::vector<DecodeResult> finished;

  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    struct Cand {
      double logp;
      std::int32_t token;
      std::size_t parent;
    };
    std::vector<Cand> cands;
    std::vector<DecoderState<S>> next_states(live.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
      std::vector<std::int32_t> prev{live[i].tokens.empty() ? Vocab::kBos : live[i].tokens.back()};
      auto res = decoder_step(g, model, prep, live[i].state, prev, false, 0.0);
      next_states[i] = res.state;
      auto lp = log_softmax_row(res.logits.data.data(), res.logits.cols());
      for (std::size_t v = 0; v < lp.size(); ++v) {
        cands.push_back({live[i].logp + lp[v], static_cast<std::int32_t>(v), i});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });

    std::vector<Hyp> next_live;
    const std::size_t take = std::min(beam_size, cands.size());
    for (std::size_t k = 0; k < take; ++k) {
      const Cand& c = cands[k];
      Hyp child;
      child.tokens = live[c.parent].tokens;
      child.tokens.push_back(c.token);
      child.logp = c.logp;
      child.state = next_states[c.parent];
      if (c.token == Vocab::kEos) {
        finished.push_back(DecodeResult{std::move(child.tokens), child.logp});
      } else {
        next_live.push_back(std::move(child));
      }
    }
    live = std::move(next_live);
  }
  for (auto& h : live) finished.push_back(DecodeResult{std::move(h.tokens), h.logp});

  // Normalized comparison; deterministic tie-breaks.
  const DecodeResult* best = nullptr;
  for (const auto& f : finished) {
    if (f.tokens.empty()) continue;
    if (!best || f.normalized_score() > best->normalized_score() ||
        (f.normalized_score() == best->normalized_score() &&
         (f.tokens.size() < best->tokens.size() ||
          (f.tokens.size() == best->tokens.size() && f.tokens < best->tokens)))) {
      best = &f;
    }
  }
  if (!best) return DecodeResult{};
  return *best;
}

#define ATRSEQ_INSTANTIATE_SEQ2SEQ(S)                                                          \
  template struct Seq2SeqModel<S>;                                                             \
  template struct EncodeResult<S>;                                                             \
  template Seq2SeqModel<S> init_seq2seq<S>(CellVariant, std::size_t, std::size_t, std::size_t, \
                                           std::size_t, std::size_t, std::mt19937_64&, bool);  \
  template Seq2SeqModel<S> bind<S>(Graph<S>&, const Seq2SeqModel<S>&);                         \
  template EncodeResult<S> encode<S>(Graph<S>&, const Seq2SeqModel<S>&, const Batch&);         \
  template AttentionPrep<S> prepare_attention<S>(Graph<S>&, const Seq2SeqModel<S>&,            \
                                                 const EncodeResult<S>&, const Batch&);        \
  template AttentionResult<S> attention<S>(Graph<S>&, const Seq2SeqModel<S>&, const Tensor<S>&, \
                                           const AttentionPrep<S>&);                           \
  template DecoderState<S> decoder_init<S>(Graph<S>&, const Seq2SeqModel<S>&,                  \
                                           const EncodeResult<S>&);                            \
  template DecoderStepResult<S> decoder_step<S>(Graph<S>&, const Seq2SeqModel<S>&,             \
                                                const AttentionPrep<S>&, const DecoderState<S>&, \
                                                const std::vector<std::int32_t>&, bool, double, \
                                                int, StepTrace<S>*);                           \
  template Tensor<S> sequence_loss<S>(Graph<S>&, const Seq2SeqModel<S>&, const Batch&, double, \
                                      bool, DecodeTraces<S>*);                                 \
  template double token_accuracy<S>(const Seq2SeqModel<S>&, const Batch&);                     \
  template DecodeResult greedy_decode<S>(const Seq2SeqModel<S>&,                               \
                                         const std::vector<std::int32_t>&, std::size_t,        \
                                         DecodeTraces<S>*);                                    \
  template DecodeResult beam_search<S>(const Seq2SeqModel<S>&, const std::vector<std::int32_t>&, \
                                       std::size_t, std::size_t);

ATRSEQ_INSTANTIATE_SEQ2SEQ(float)
ATRSEQ_INSTANTIATE_SEQ2SEQ(double)

#undef ATRSEQ_INSTANTIATE_SEQ2SEQ

}  // namespace atrseq
