// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "atrseq/errors.hpp"

namespace atrseq {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

// Dense row-major tensor. `node` is a handle into the graph that produced the
// value, or -1 when the value is not tracked for differentiation.
template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> data;
  int node = -1;

  Tensor() = default;
  Tensor(Shape shp, std::vector<S> values) : shape(std::move(shp)), data(std::move(values)) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor data of size " + std::to_string(data.size()) +
                       " does not fill shape " + shape_to_string(shape));
    }
  }

  static Tensor zeros(Shape shp) {
    std::size_t n = shape_numel(shp);
    return Tensor(std::move(shp), std::vector<S>(n, S(0)));
  }

  static Tensor full(Shape shp, S value) {
    std::size_t n = shape_numel(shp);
    return Tensor(std::move(shp), std::vector<S>(n, value));
  }

  static Tensor scalar(S value) { return Tensor({1}, {value}); }

  static Tensor row(std::vector<S> values) {
    Shape shp{1, values.size()};
    return Tensor(std::move(shp), std::move(values));
  }

  static Tensor uniform(Shape shp, S lo, S hi, std::mt19937_64& rng) {
    std::size_t n = shape_numel(shp);
    std::vector<S> values(n);
    std::uniform_real_distribution<S> dist(lo, hi);
    for (S& v : values) v = dist(rng);
    return Tensor(std::move(shp), std::move(values));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return numel() == 1; }

  std::size_t rows() const {
    require_rank2();
    return shape[0];
  }
  std::size_t cols() const {
    require_rank2();
    return shape[1];
  }

  S& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  S at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  // Value of a one-element tensor.
  S value() const {
    if (!is_scalar()) {
      throw ContractError("scalar tensor expected, got shape " + shape_to_string(shape));
    }
    return data[0];
  }

  // Same values, no graph handle.
  Tensor detached() const {
    Tensor t(*this);
    t.node = -1;
    return t;
  }

  void require_rank2() const {
    if (shape.size() != 2) {
      throw ShapeError("rank-2 tensor expected, got shape " + shape_to_string(shape));
    }
  }
};

}  // namespace atrseq
