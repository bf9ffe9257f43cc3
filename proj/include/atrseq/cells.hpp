// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "atrseq/graph.hpp"

namespace atrseq {

enum class CellVariant { SRNN, ATR, GRU, LSTM, RAN };

std::string to_string(CellVariant variant);
CellVariant cell_variant_from_string(const std::string& name);
std::vector<std::string> cell_variant_names();

// Named weight slots of one recurrent cell. Matrices map row vectors on the
// right: x [B x in] . W [in x hidden]. No biases unless `bias` is set.
template <typename S>
struct CellParams {
  CellVariant variant = CellVariant::ATR;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  bool bias = false;
  std::vector<std::pair<std::string, Tensor<S>>> weights;

  const Tensor<S>& at(const std::string& name) const;
  Tensor<S>& at(const std::string& name);
  bool has(const std::string& name) const;

  void visit(const std::function<void(const std::string&, Tensor<S>&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor<S>&)>& fn) const;

  std::size_t parameter_count() const;
  std::size_t matrix_count() const;  // weight matrices, biases excluded
};

template <typename S>
struct CellState {
  Tensor<S> h;  // [B x hidden]
  Tensor<S> c;  // LSTM memory cell only; empty otherwise
};

// Per-step gate record. Only the fields meaningful for the variant are
// populated; values are detached from the graph.
template <typename S>
struct StepTrace {
  CellVariant variant = CellVariant::SRNN;
  Tensor<S> i, f;  // ATR / LSTM / RAN
  Tensor<S> z, r;  // GRU
  Tensor<S> p, q;  // ATR transformed input and history
};

template <typename S>
CellParams<S> init_params(CellVariant variant, std::size_t input_dim, std::size_t hidden_dim,
                          std::mt19937_64& rng, bool bias = false);

// Tracked copy: every weight registered as a graph parameter.
template <typename S>
CellParams<S> bind(Graph<S>& graph, const CellParams<S>& params);

template <typename S>
CellState<S> zero_state(CellVariant variant, std::size_t batch, std::size_t hidden_dim);

template <typename S>
CellState<S> atr_step(Graph<S>& g, const CellParams<S>& p, const CellState<S>& state,
                      const Tensor<S>& x, StepTrace<S>* trace = nullptr);
template <typename S>
CellState<S> gru_step(Graph<S>& g, const CellParams<S>& p, const CellState<S>& state,
                      const Tensor<S>& x, StepTrace<S>* trace = nullptr);
template <typename S>
CellState<S> lstm_step(Graph<S>& g, const CellParams<S>& p, const CellState<S>& state,
                       const Tensor<S>& x, StepTrace<S>* trace = nullptr);
template <typename S>
CellState<S> ran_step(Graph<S>& g, const CellParams<S>& p, const CellState<S>& state,
                      const Tensor<S>& x, StepTrace<S>* trace = nullptr);
template <typename S>
CellState<S> srnn_step(Graph<S>& g, const CellParams<S>& p, const CellState<S>& state,
                       const Tensor<S>& x, StepTrace<S>* trace = nullptr);

// Dispatch on p.variant.
template <typename S>
CellState<S> cell_step(Graph<S>& g, const CellParams<S>& p, const CellState<S>& state,
                       const Tensor<S>& x, StepTrace<S>* trace = nullptr);

// Matmul-counter delta of one instrumented step. With input_dim == hidden_dim
// the RAN content transform is the identity, matching its 4-transform
// configuration; otherwise RAN uses a projection and reports 5.
std::uint64_t count_step_matmuls(CellVariant variant, std::size_t input_dim = 8,
                                 std::size_t hidden_dim = 8);

}  // namespace atrseq
