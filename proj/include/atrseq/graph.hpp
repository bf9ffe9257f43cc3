// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "atrseq/tensor.hpp"

namespace atrseq {

// True when the ATRSEQ_CHECKED environment variable forces checked numerics.
bool checked_mode_forced();

struct GraphOptions {
  bool checked = true;    // scan every op output for NaN/Inf
  bool recording = true;  // append nodes to the tape
  std::uint64_t seed = 0x9e3779b97f4a7c15ull;
};

// Gradients keyed by the node id of the parameter they belong to.
template <typename S>
class GradientMap {
 public:
  void set(int node, Tensor<S> grad) { grads_[node] = std::move(grad); }
  bool contains(int node) const { return grads_.count(node) != 0; }
  const Tensor<S>& at(int node) const {
    auto it = grads_.find(node);
    if (it == grads_.end()) {
      throw ContractError("no gradient recorded for node " + std::to_string(node));
    }
    return it->second;
  }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<int, Tensor<S>> grads_;
};

// Matmul counts per scope label.
struct OpCountReport {
  std::map<std::string, std::uint64_t> counts;
};

// Reverse-mode tape. Nodes are appended in topological order during the
// forward pass and replayed once, in reverse, by backward(). Single-threaded;
// the RNG used for dropout is owned by the graph.
template <typename S>
class Graph {
 public:
  explicit Graph(GraphOptions options = {});
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaves.
  Tensor<S> input(Tensor<S> value);      // tracked, no gradient reported
  Tensor<S> parameter(Tensor<S> value);  // tracked, gradient reported by backward()

  // a[m x k] . b[k x n]. Increments the matmul counter by one.
  Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);

  // Elementwise, exact shape or row-broadcast ([1 x n] against [m x n]).
  Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
  Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
  Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
  Tensor<S> sigmoid(const Tensor<S>& x);
  Tensor<S> tanh(const Tensor<S>& x);
  Tensor<S> scale(const Tensor<S>& x, S factor);

  // Reductions and rearrangements.
  Tensor<S> sum(const Tensor<S>& x);  // scalar
  Tensor<S> reshape(const Tensor<S>& x, Shape shape);
  Tensor<S> transpose(const Tensor<S>& x);
  Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts);
  Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts);
  Tensor<S> slice_cols(const Tensor<S>& x, std::size_t begin, std::size_t count);

  // Embedding-style row gather; gradient scatter-adds into the table.
  Tensor<S> rows(const Tensor<S>& table, const std::vector<std::int32_t>& ids);

  // Whole-matrix repeat: [m x n] -> [(times*m) x n], block t = x.
  Tensor<S> tile_rows(const Tensor<S>& x, std::size_t times);

  // out[b] = sum_t weights[b, t] * values[t*B + b], weights [B x T],
  // values [(T*B) x d]. Counts as one matrix transformation.
  Tensor<S> block_weighted_sum(const Tensor<S>& weights, const Tensor<S>& values);

  // Row-wise softmax over positions with mask[r*n + c] != 0; masked entries
  // are exactly zero. A fully masked row is a contract error.
  Tensor<S> masked_softmax(const Tensor<S>& energies, const std::vector<std::uint8_t>& mask);

  // Mean over unmasked rows of -log softmax(logits)[target]; masked rows
  // contribute zero loss and zero gradient.
  Tensor<S> softmax_xent(const Tensor<S>& logits, std::span<const std::int32_t> targets,
                         std::span<const std::uint8_t> mask);

  // Inverted dropout: zero with probability `rate`, scale survivors by
  // 1/(1-rate). Identity when `training` is false or rate == 0.
  Tensor<S> dropout(const Tensor<S>& x, double rate, bool training);
  Tensor<S> dropout(const Tensor<S>& x, double rate, bool training, std::mt19937_64& rng);

  // Reverse replay from a scalar loss. The graph is consumed afterwards;
  // call reset() to reuse it.
  GradientMap<S> backward(const Tensor<S>& loss);
  void reset();

  std::uint64_t matmul_count() const { return matmuls_; }
  void reset_matmul_count() { matmuls_ = 0; }

  bool recording() const { return opt_.recording; }
  void set_recording(bool on) { opt_.recording = on; }
  bool checked() const { return opt_.checked; }
  std::mt19937_64& rng() { return rng_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    bool parameter = false;
    // Receives the graph and the output gradient, accumulates into parents.
    std::function<void(Graph&, const std::vector<S>&)> back;
  };

  int push(Shape shape, bool parameter, std::function<void(Graph&, const std::vector<S>&)> back);
  std::vector<S>& grad_buffer(int node);
  void accumulate(int node, const std::vector<S>& grad);
  void check_output(const Tensor<S>& t, const char* op) const;
  void ensure_live() const;
  Tensor<S> unary_result(const Tensor<S>& x, std::vector<S> out,
                         std::function<void(Graph&, const std::vector<S>&)> back, const char* op);

  GraphOptions opt_;
  std::vector<Node> nodes_;
  std::vector<std::vector<S>> grads_;
  bool consumed_ = false;
  std::uint64_t matmuls_ = 0;
  std::mt19937_64 rng_;
};

// Records the matmul count delta of a scope into a report.
template <typename S>
class CounterScope {
 public:
  CounterScope(Graph<S>& graph, OpCountReport& report, std::string label)
      : graph_(graph), report_(report), label_(std::move(label)), start_(graph.matmul_count()) {}
  ~CounterScope() { report_.counts[label_] += graph_.matmul_count() - start_; }
  CounterScope(const CounterScope&) = delete;
  CounterScope& operator=(const CounterScope&) = delete;

 private:
  Graph<S>& graph_;
  OpCountReport& report_;
  std::string label_;
  std::uint64_t start_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace atrseq
