// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "atrseq/cells.hpp"

namespace atrseq {

// Per-input weights of a single-sequence run: g[t][k] is the weight of input
// k on state t, g[t][t] = i_t, g[t][k] = i_k * prod_{l=k+1..t} f_l, and zero
// for k > t. Stored densely in double regardless of the run's element type.
struct AttributionMatrix {
  std::size_t steps = 0;
  std::size_t dim = 0;
  std::vector<double> g;  // [t][k][j]

  double value(std::size_t t, std::size_t k, std::size_t j) const {
    return g[(t * steps + k) * dim + j];
  }
  // [t][k] mean of |g| over the hidden dimension.
  std::vector<double> reduced() const;
};

struct Rollout {
  std::vector<std::vector<double>> states;  // reconstructed h_t, T x dim
  AttributionMatrix attribution;
};

// Reconstructs every state of a twin-gated run as a weighted sum of its
// transformed inputs plus a prod(f) * h0 carry term, so the identity is exact
// for any initial state. Traces must come from a batch-1 ATR run.
template <typename S>
Rollout rollout(const std::vector<StepTrace<S>>& traces, const std::vector<double>& h0 = {});

// For each position t >= 1, the earlier position with the largest reduced
// weight; ties break toward the most recent position. Empty when steps < 2.
std::vector<std::pair<std::size_t, std::size_t>> dependency_links(const AttributionMatrix& attribution);

struct GateStats {
  std::vector<double> mean_input;   // per position, averaged over runs
  std::vector<double> mean_forget;
  std::optional<double> pearson_r;  // empty when undefined
  std::string note;
};

// Position-wise gate means across runs (ragged tails excluded), then Pearson
// correlation between the two position series.
template <typename S>
GateStats gate_correlation(const std::vector<std::vector<StepTrace<S>>>& runs);

std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b);

// sigma(x + y) - sigma(x - y) sampled on a square grid.
struct SurfaceGrid {
  std::vector<double> xs, ys;
  std::vector<double> values;  // row-major, values[i * ys.size() + j] at (xs[i], ys[j])

  double at(std::size_t i, std::size_t j) const { return values[i * ys.size() + j]; }
};

SurfaceGrid twin_gate_surface(double lo = -5.0, double hi = 5.0, std::size_t resolution = 101);
void write_surface_csv(const SurfaceGrid& grid, const std::string& path);

}  // namespace atrseq
