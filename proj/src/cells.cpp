// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#include "atrseq/cells.hpp"

#include <algorithm>

namespace atrseq {

std::string to_string(CellVariant variant) {
  switch (variant) {
    case CellVariant::SRNN: return "srnn";
    case CellVariant::ATR: return "atr";
    case CellVariant::GRU: return "gru";
    case CellVariant::LSTM: return "lstm";
    case CellVariant::RAN: return "ran";
  }
  return "?";
}

std::vector<std::string> cell_variant_names() { return {"srnn", "atr", "gru", "lstm", "ran"}; }

CellVariant cell_variant_from_string(const std::string& name) {
  if (name == "srnn") return CellVariant::SRNN;
  if (name == "atr") return CellVariant::ATR;
  if (name == "gru") return CellVariant::GRU;
  if (name == "lstm") return CellVariant::LSTM;
  if (name == "ran") return CellVariant::RAN;
  std::string valid;
  for (const auto& n : cell_variant_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown cell variant '" + name + "' (valid: " + valid + ")");
}

namespace {

struct SlotSpec {
  std::string name;
  bool from_input;  // input_dim x hidden, else hidden x hidden
};

// Matrix slots per variant. RAN carries a content projection only when the
// input does not already match the hidden size.
std::vector<SlotSpec> matrix_slots(CellVariant variant, bool dims_match) {
  switch (variant) {
    case CellVariant::SRNN:
      return {{"W_x", true}, {"W_h", false}};
    case CellVariant::ATR:
      return {{"W_x", true}, {"W_h", false}};
    case CellVariant::GRU:
      return {{"W_z", true}, {"U_z", false}, {"W_r", true}, {"U_r", false},
              {"W_h", true}, {"U_h", false}};
    case CellVariant::LSTM:
      return {{"W_i", true}, {"U_i", false}, {"W_f", true}, {"U_f", false},
              {"W_o", true}, {"U_o", false}, {"W_c", true}, {"U_c", false}};
    case CellVariant::RAN: {
      std::vector<SlotSpec> slots = {{"W_ix", true}, {"W_ih", false}, {"W_fx", true}, {"W_fh", false}};
      if (!dims_match) slots.push_back({"W_cx", true});
      return slots;
    }
  }
  return {};
}

std::vector<std::string> bias_slots(CellVariant variant) {
  switch (variant) {
    case CellVariant::SRNN: return {"b"};
    case CellVariant::ATR: return {"b_x", "b_h"};
    case CellVariant::GRU: return {"b_z", "b_r", "b_h"};
    case CellVariant::LSTM: return {"b_i", "b_f", "b_o", "b_c"};
    case CellVariant::RAN: return {"b_i", "b_f"};
  }
  return {};
}

}  // namespace

template <typename S>
const Tensor<S>& CellParams<S>::at(const std::string& name) const {
  for (const auto& [n, t] : weights) {
    if (n == name) return t;
  }
  throw ContractError("cell has no weight slot '" + name + "'");
}

template <typename S>
Tensor<S>& CellParams<S>::at(const std::string& name) {
  for (auto& [n, t] : weights) {
    if (n == name) return t;
  }
  throw ContractError("cell has no weight slot '" + name + "'");
}

template <typename S>
bool CellParams<S>::has(const std::string& name) const {
  return std::any_of(weights.begin(), weights.end(),
                     [&](const auto& kv) { return kv.first == name; });
}

template <typename S>
void CellParams<S>::visit(const std::function<void(const std::string&, Tensor<S>&)>& fn) {
  for (auto& [n, t] : weights) fn(n, t);
}

template <typename S>
void CellParams<S>::visit(const std::function<void(const std::string&, const Tensor<S>&)>& fn) const {
  for (const auto& [n, t] : weights) fn(n, t);
}

template <typename S>
std::size_t CellParams<S>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : weights) n += t.numel();
  return n;
}

template <typename S>
std::size_t CellParams<S>::matrix_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : weights) {
    if (name[0] != 'b') ++n;
  }
  return n;
}

template <typename S>
CellParams<S> init_params(CellVariant variant, std::size_t input_dim, std::size_t hidden_dim,
                          std::mt19937_64& rng, bool bias) {
  CellParams<S> p;
  p.variant = variant;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.bias = bias;
  const S lo = S(-0.08), hi = S(0.08);
  for (const auto& slot : matrix_slots(variant, input_dim == hidden_dim)) {
    Shape shape = slot.from_input ? Shape{input_dim, hidden_dim} : Shape{hidden_dim, hidden_dim};
    p.weights.emplace_back(slot.name, Tensor<S>::uniform(shape, lo, hi, rng));
  }
  if (bias) {
    for (const auto& name : bias_slots(variant)) {
      p.weights.emplace_back(name, Tensor<S>::uniform({1, hidden_dim}, lo, hi, rng));
    }
  }
  return p;
}

template <typename S>
CellParams<S> bind(Graph<S>& graph, const CellParams<S>& params) {
  CellParams<S> bound = params;
  for (auto& [name, t] : bound.weights) t = graph.parameter(std::move(t));
  return bound;
}

template <typename S>
CellState<S> zero_state(CellVariant variant, std::size_t batch, std::size_t hidden_dim) {
  CellState<S> s;
  s.h = Tensor<S>::zeros({batch, hidden_dim});
  if (variant == CellVariant::LSTM) s.c = Tensor<S>::zeros({batch, hidden_dim});
  return s;
}

template <typename S>
static Tensor<S> linear(Graph<S>& g, const CellParams<S>& p, const Tensor<S>& x,
                        const std::string& w, const std::string& b) {
  Tensor<S> out = g.matmul(x, p.at(w));
  if (p.bias && p.has(b)) out = g.add(out, p.at(b));
  return out;
}

template <typename S>
CellState<S> atr_step(Graph<S>& g, const CellParams<S>& p, const CellState<S>& state,
                      const Tensor<S>& x, StepTrace<S>* trace) {
  const Tensor<S>& h = state.h;
  Tensor<S> q = linear(g, p, h, "W_h", "b_h");
  Tensor<S> pt = linear(g, p, x, "W_x", "b_x");
  Tensor<S> i = g.sigmoid(g.add(pt, q));
  Tensor<S> f = g.sigmoid(g.sub(pt, q));
  Tensor<S> hn = g.add(g.mul(i, pt), g.mul(f, h));
  if (trace) {
    trace->variant = CellVariant::ATR;
    trace->i = i.detached();
    trace->f = f.detached();
    trace->p = pt.detached();
    trace->q = q.detached();
  }
  return {hn, {}};
}

template <typename S>
CellState<S> gru_step(Graph<S>& g, const CellParams<S>& p, const CellState<S>& state,
                      const Tensor<S>& x, StepTrace<S>* trace) {
  const Tensor<S>& h = state.h;
  Tensor<S> z = g.sigmoid(g.add(linear(g, p, x, "W_z", "b_z"), g.matmul(h, p.at("U_z"))));
  Tensor<S> r = g.sigmoid(g.add(linear(g, p, x, "W_r", "b_r"), g.matmul(h, p.at("U_r"))));
  Tensor<S> cand = g.tanh(g.add(linear(g, p, x, "W_h", "b_h"), g.matmul(g.mul(r, h), p.at("U_h"))));
  Tensor<S> ones = Tensor<S>::full(z.shape, S(1));
  Tensor<S> hn = g.add(g.mul(z, h), g.mul(g.sub(ones, z), cand));
  if (trace) {
    trace->variant = CellVariant::GRU;
    trace->z = z.detached();
    trace->r = r.detached();
  }
  return {hn, {}};
}

template <typename S>
CellState<S> lstm_step(Graph<S>& g, const CellParams<S>& p, const CellState<S>& state,
                       const Tensor<S>& x, StepTrace<S>* trace) {
  const Tensor<S>& h = state.h;
  const Tensor<S>& c = state.c;
  Tensor<S> i = g.sigmoid(g.add(linear(g, p, x, "W_i", "b_i"), g.matmul(h, p.at("U_i"))));
  Tensor<S> f = g.sigmoid(g.add(linear(g, p, x, "W_f", "b_f"), g.matmul(h, p.at("U_f"))));
  Tensor<S> o = g.sigmoid(g.add(linear(g, p, x, "W_o", "b_o"), g.matmul(h, p.at("U_o"))));
  Tensor<S> cand = g.tanh(g.add(linear(g, p, x, "W_c", "b_c"), g.matmul(h, p.at("U_c"))));
  Tensor<S> cn = g.add(g.mul(f, c), g.mul(i, cand));
  Tensor<S> hn = g.mul(o, g.tanh(cn));
  if (trace) {
    trace->variant = CellVariant::LSTM;
    trace->i = i.detached();
    trace->f = f.detached();
  }
  return {hn, cn};
}

template <typename S>
CellState<S> ran_step(Graph<S>& g, const CellParams<S>& p, const CellState<S>& state,
                      const Tensor<S>& x, StepTrace<S>* trace) {
  const Tensor<S>& h = state.h;
  Tensor<S> i = g.sigmoid(g.add(linear(g, p, x, "W_ix", "b_i"), g.matmul(h, p.at("W_ih"))));
  Tensor<S> f = g.sigmoid(g.add(linear(g, p, x, "W_fx", "b_f"), g.matmul(h, p.at("W_fh"))));
  Tensor<S> content = p.has("W_cx") ? g.matmul(x, p.at("W_cx")) : x;
  Tensor<S> hn = g.add(g.mul(i, content), g.mul(f, h));
  if (trace) {
    trace->variant = CellVariant::RAN;
    trace->i = i.detached();
    trace->f = f.detached();
  }
  return {hn, {}};
}

template <typename S>
CellState<S> srnn_step(Graph<S>& g, const CellParams<S>& p, const CellState<S>& state,
                       const Tensor<S>& x, StepTrace<S>* trace) {
  Tensor<S> hn = g.tanh(g.add(linear(g, p, x, "W_x", "b"), g.matmul(state.h, p.at("W_h"))));
  if (trace) trace->variant = CellVariant::SRNN;
  return {hn, {}};
}

template <typename S>
CellState<S> cell_step(Graph<S>& g, const CellParams<S>& p, const CellState<S>& state,
                       const Tensor<S>& x, StepTrace<S>* trace) {
  switch (p.variant) {
    case CellVariant::SRNN: return srnn_step(g, p, state, x, trace);
    case CellVariant::ATR: return atr_step(g, p, state, x, trace);
    case CellVariant::GRU: return gru_step(g, p, state, x, trace);
    case CellVariant::LSTM: return lstm_step(g, p, state, x, trace);
    case CellVariant::RAN: return ran_step(g, p, state, x, trace);
  }
  throw ContractError("cell_step: unhandled variant");
}

std::uint64_t count_step_matmuls(CellVariant variant, std::size_t input_dim,
                                 std::size_t hidden_dim) {
  GraphOptions opt;
  opt.recording = false;
  Graph<double> g(opt);
  std::mt19937_64 rng(7);
  CellParams<double> params = init_params<double>(variant, input_dim, hidden_dim, rng);
  CellState<double> state = zero_state<double>(variant, 1, hidden_dim);
  Tensor<double> x = Tensor<double>::uniform({1, input_dim}, -1.0, 1.0, rng);
  const std::uint64_t before = g.matmul_count();
  cell_step(g, params, state, x);
  return g.matmul_count() - before;
}

#define ATRSEQ_INSTANTIATE_CELLS(S)                                                             \
  template struct CellParams<S>;                                                                \
  template CellParams<S> init_params<S>(CellVariant, std::size_t, std::size_t, std::mt19937_64&, \
                                        bool);                                                  \
  template CellParams<S> bind<S>(Graph<S>&, const CellParams<S>&);                              \
  template CellState<S> zero_state<S>(CellVariant, std::size_t, std::size_t);                   \
  template CellState<S> atr_step<S>(Graph<S>&, const CellParams<S>&, const CellState<S>&,       \
                                    const Tensor<S>&, StepTrace<S>*);                           \
  template CellState<S> gru_step<S>(Graph<S>&, const CellParams<S>&, const CellState<S>&,       \
                                    const Tensor<S>&, StepTrace<S>*);                           \
  template CellState<S> lstm_step<S>(Graph<S>&, const CellParams<S>&, const CellState<S>&,      \
                                     const Tensor<S>&, StepTrace<S>*);                          \
  template CellState<S> ran_step<S>(Graph<S>&, const CellParams<S>&, const CellState<S>&,       \
                                    const Tensor<S>&, StepTrace<S>*);                           \
  template CellState<S> srnn_step<S>(Graph<S>&, const CellParams<S>&, const CellState<S>&,      \
                                     const Tensor<S>&, StepTrace<S>*);                          \
  template CellState<S> cell_step<S>(Graph<S>&, const CellParams<S>&, const CellState<S>&,      \
                                     const Tensor<S>&, StepTrace<S>*);

ATRSEQ_INSTANTIATE_CELLS(float)
ATRSEQ_INSTANTIATE_CELLS(double)

#undef ATRSEQ_INSTANTIATE_CELLS

}  // namespace atrseq
