// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#include "atrseq/gradcheck.hpp"

#include <cmath>

namespace atrseq {

namespace {

constexpr double kStep = 1e-5;
// Entries where both gradients are this small are treated as matching; the
// finite-difference noise floor would otherwise dominate the ratio.
constexpr double kTinyGrad = 1e-7;

double rel_err(double analytic, double numeric) {
  const double mag = std::max(std::abs(analytic), std::abs(numeric));
  if (mag < kTinyGrad) return 0.0;
  return std::abs(analytic - numeric) / mag;
}

struct FdProblem {
  std::vector<std::pair<std::string, Tensor<double>*>> slots;
  std::function<double()> forward_loss;                  // recording off
  std::function<GradientMap<double>(std::vector<int>&)> backward;  // fills slot node ids
};

GradCheckReport run_fd(FdProblem& prob) {
  std::vector<int> nodes;
  GradientMap<double> grads = prob.backward(nodes);

  GradCheckReport report;
  for (std::size_t s = 0; s < prob.slots.size(); ++s) {
    Tensor<double>* slot = prob.slots[s].second;
    const Tensor<double>& analytic = grads.at(nodes[s]);
    for (std::size_t j = 0; j < slot->data.size(); ++j) {
      const double saved = slot->data[j];
      slot->data[j] = saved + kStep;
      const double up = prob.forward_loss();
      slot->data[j] = saved - kStep;
      const double down = prob.forward_loss();
      slot->data[j] = saved;
      const double numeric = (up - down) / (2.0 * kStep);
      const double err = rel_err(analytic.data[j], numeric);
      ++report.checked_values;
      if (err > report.worst_rel_err) {
        report.worst_rel_err = err;
        report.worst_slot = prob.slots[s].first;
      }
    }
  }
  return report;
}

}  // namespace

GradCheckReport gradcheck_cell(CellVariant variant, std::size_t input_dim, std::size_t hidden_dim,
                               std::size_t steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CellParams<double> params = init_params<double>(variant, input_dim, hidden_dim, rng);
  std::vector<Tensor<double>> xs, readouts;
  for (std::size_t t = 0; t < steps; ++t) {
    xs.push_back(Tensor<double>::uniform({1, input_dim}, -2.0, 2.0, rng));
    readouts.push_back(Tensor<double>::uniform({1, hidden_dim}, -1.0, 1.0, rng));
  }

  auto run = [&](Graph<double>& g, const CellParams<double>& p) {
    CellState<double> state = zero_state<double>(variant, 1, hidden_dim);
    Tensor<double> loss = Tensor<double>::scalar(0.0);
    loss = g.input(loss);
    for (std::size_t t = 0; t < steps; ++t) {
      state = cell_step(g, p, state, xs[t]);
      loss = g.add(loss, g.sum(g.mul(state.h, readouts[t])));
    }
    return loss;
  };

  FdProblem prob;
  params.visit([&prob](const std::string& name, Tensor<double>& t) {
    prob.slots.emplace_back(name, &t);
  });
  prob.forward_loss = [&]() {
    GraphOptions opt;
    opt.recording = false;
    Graph<double> g(opt);
    return run(g, params).value();
  };
  prob.backward = [&](std::vector<int>& nodes) {
    Graph<double> g;
    CellParams<double> bound = bind(g, params);
    bound.visit([&nodes](const std::string&, Tensor<double>& t) { nodes.push_back(t.node); });
    return g.backward(run(g, bound));
  };
  return run_fd(prob);
}

GradCheckReport gradcheck_seq2seq(CellVariant variant, std::size_t embed_dim,
                                  std::size_t enc_hidden, std::size_t attn_dim,
                                  std::size_t src_vocab, std::size_t tgt_vocab,
                                  std::size_t src_len, std::size_t tgt_len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Seq2SeqModel<double> model =
      init_seq2seq<double>(variant, src_vocab, tgt_vocab, embed_dim, enc_hidden, attn_dim, rng);

  // Two rows with different lengths so masking takes part in the check.
  Batch batch;
  batch.size = 2;
  batch.src_len = src_len;
  batch.tgt_len = tgt_len;
  auto fill = [&](std::vector<std::int32_t>& ids, std::vector<std::uint8_t>& mask,
                  std::size_t len, std::size_t vocab, std::vector<std::size_t> lengths) {
    ids.assign(2 * len, Vocab::kPad);
    mask.assign(2 * len, 0);
    std::uniform_int_distribution<std::int32_t> tok(Vocab::kReserved,
                                                    static_cast<std::int32_t>(vocab) - 1);
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t j = 0; j < lengths[r]; ++j) {
        ids[r * len + j] = tok(rng);
        mask[r * len + j] = 1;
      }
    }
  };
  fill(batch.src, batch.src_mask, src_len, src_vocab, {src_len, src_len - 1});
  fill(batch.tgt, batch.tgt_mask, tgt_len, tgt_vocab, {tgt_len, tgt_len - 1});
  batch.src_lengths = {src_len, src_len - 1};
  batch.tgt_lengths = {tgt_len, tgt_len - 1};

  FdProblem prob;
  model.visit([&prob](const std::string& name, Tensor<double>& t) {
    prob.slots.emplace_back(name, &t);
  });
  prob.forward_loss = [&]() {
    GraphOptions opt;
    opt.recording = false;
    Graph<double> g(opt);
    return sequence_loss(g, model, batch, 0.0, false).value();
  };
  prob.backward = [&](std::vector<int>& nodes) {
    Graph<double> g;
    Seq2SeqModel<double> bound = bind(g, model);
    bound.visit([&nodes](const std::string&, Tensor<double>& t) { nodes.push_back(t.node); });
    return g.backward(sequence_loss(g, bound, batch, 0.0, false));
  };
  return run_fd(prob);
}

}  // namespace atrseq
