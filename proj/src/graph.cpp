// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#include "atrseq/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace atrseq {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool checked_mode_forced() {
  const char* v = std::getenv("ATRSEQ_CHECKED");
  return v != nullptr && v[0] == '1';
}

namespace {

// c[m x n] += a[m x k] . b[k x n]
template <typename S>
void kernel_nn(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const S av = arow[kk];
      const S* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x k] += dout[m x n] . b[k x n]^T
template <typename S>
void kernel_nt(const S* dout, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* drow = dout + i * n;
    S* crow = c + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const S* brow = b + kk * n;
      S s = 0;
      for (std::size_t j = 0; j < n; ++j) s += drow[j] * brow[j];
      crow[kk] += s;
    }
  }
}

// c[k x n] += a[m x k]^T . dout[m x n]
template <typename S>
void kernel_tn(const S* a, const S* dout, S* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    const S* drow = dout + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const S av = arow[kk];
      S* crow = c + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * drow[j];
    }
  }
}

enum class Broadcast { None, RowsOfA, RowsOfB };

// Exact shapes, or one side a single row repeated down the other.
Broadcast broadcast_kind(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::None;
  auto is_row = [](const Shape& s) { return s.size() == 2 && s[0] == 1; };
  auto row_matches = [](const Shape& row, const Shape& mat) {
    return mat.size() == 2 && mat[1] == row[1];
  };
  if (is_row(b) && row_matches(b, a)) return Broadcast::RowsOfB;
  if (is_row(a) && row_matches(a, b)) return Broadcast::RowsOfA;
  throw ShapeError(std::string(op) + ": shapes " + shape_to_string(a) + " and " +
                   shape_to_string(b) + " are not broadcast-compatible");
}

}  // namespace

template <typename S>
Graph<S>::Graph(GraphOptions options) : opt_(options), rng_(options.seed) {
  if (checked_mode_forced()) opt_.checked = true;
}

template <typename S>
void Graph<S>::ensure_live() const {
  if (consumed_) {
    throw ContractError("graph already consumed by backward(); call reset() to reuse it");
  }
}

template <typename S>
void Graph<S>::check_output(const Tensor<S>& t, const char* op) const {
  if (!opt_.checked) return;
  for (S v : t.data) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

template <typename S>
int Graph<S>::push(Shape shape, bool parameter,
                   std::function<void(Graph&, const std::vector<S>&)> back) {
  nodes_.push_back(Node{std::move(shape), parameter, std::move(back)});
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename S>
std::vector<S>& Graph<S>::grad_buffer(int node) {
  auto& buf = grads_[node];
  if (buf.empty()) buf.assign(shape_numel(nodes_[node].shape), S(0));
  return buf;
}

template <typename S>
void Graph<S>::accumulate(int node, const std::vector<S>& grad) {
  auto& buf = grad_buffer(node);
  for (std::size_t i = 0; i < grad.size(); ++i) buf[i] += grad[i];
}

template <typename S>
Tensor<S> Graph<S>::input(Tensor<S> value) {
  ensure_live();
  if (!opt_.recording) return value.detached();
  value.node = push(value.shape, false, nullptr);
  return value;
}

template <typename S>
Tensor<S> Graph<S>::parameter(Tensor<S> value) {
  ensure_live();
  if (!opt_.recording) return value.detached();
  value.node = push(value.shape, true, nullptr);
  return value;
}

template <typename S>
Tensor<S> Graph<S>::matmul(const Tensor<S>& a, const Tensor<S>& b) {
  ensure_live();
  a.require_rank2();
  b.require_rank2();
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  if (b.shape[0] != k) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_to_string(a.shape) + " . " +
                     shape_to_string(b.shape));
  }
  ++matmuls_;
  Tensor<S> out = Tensor<S>::zeros({m, n});
  kernel_nn(a.data.data(), b.data.data(), out.data.data(), m, k, n);
  check_output(out, "matmul");
  if (opt_.recording) {
    const int pa = a.node, pb = b.node;
    std::vector<S> adata = a.data, bdata = b.data;
    out.node = push(out.shape, false, [pa, pb, adata, bdata, m, k, n](Graph& g, const std::vector<S>& gout) {
      if (pa >= 0) kernel_nt(gout.data(), bdata.data(), g.grad_buffer(pa).data(), m, k, n);
      if (pb >= 0) kernel_tn(adata.data(), gout.data(), g.grad_buffer(pb).data(), m, k, n);
    });
  }
  return out;
}

namespace {
enum class EwKind { Add, Sub, Mul };
}

template <typename S>
static Tensor<S> binary_ew(const Tensor<S>& a, const Tensor<S>& b, EwKind kind, const char* name) {
  Broadcast bc = broadcast_kind(a.shape, b.shape, name);
  const Tensor<S>& big = (bc == Broadcast::RowsOfA) ? b : a;
  Tensor<S> out = Tensor<S>::zeros(big.shape);
  const std::size_t total = out.numel();
  const std::size_t rowlen = (bc == Broadcast::None) ? total : big.shape[1];

  auto lane = [&](std::size_t i) -> std::pair<S, S> {
    const S av = (bc == Broadcast::RowsOfA) ? a.data[i % rowlen] : a.data[i];
    const S bv = (bc == Broadcast::RowsOfB) ? b.data[i % rowlen] : b.data[i];
    return {av, bv};
  };
  for (std::size_t i = 0; i < total; ++i) {
    auto [av, bv] = lane(i);
    switch (kind) {
      case EwKind::Add: out.data[i] = av + bv; break;
      case EwKind::Sub: out.data[i] = av - bv; break;
      case EwKind::Mul: out.data[i] = av * bv; break;
    }
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::add(const Tensor<S>& a, const Tensor<S>& b) {
  ensure_live();
  Tensor<S> out = binary_ew(a, b, EwKind::Add, "add");
  check_output(out, "add");
  if (opt_.recording && (a.node >= 0 || b.node >= 0)) {
    const int pa = a.node, pb = b.node;
    out.node = push(out.shape, false, [pa, pb](Graph& g, const std::vector<S>& gout) {
      // A row-broadcast side has a shorter buffer; i % n folds rows onto it.
      auto spread = [&gout](Graph& gg, int node) {
        if (node < 0) return;
        auto& buf = gg.grad_buffer(node);
        const std::size_t n = buf.size();
        for (std::size_t i = 0; i < gout.size(); ++i) buf[i % n] += gout[i];
      };
      spread(g, pa);
      spread(g, pb);
    });
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::sub(const Tensor<S>& a, const Tensor<S>& b) {
  ensure_live();
  Tensor<S> out = binary_ew(a, b, EwKind::Sub, "sub");
  check_output(out, "sub");
  if (opt_.recording && (a.node >= 0 || b.node >= 0)) {
    const int pa = a.node, pb = b.node;
    out.node = push(out.shape, false, [pa, pb](Graph& g, const std::vector<S>& gout) {
      if (pa >= 0) {
        auto& buf = g.grad_buffer(pa);
        const std::size_t n = buf.size();
        for (std::size_t i = 0; i < gout.size(); ++i) buf[i % n] += gout[i];
      }
      if (pb >= 0) {
        auto& buf = g.grad_buffer(pb);
        const std::size_t n = buf.size();
        for (std::size_t i = 0; i < gout.size(); ++i) buf[i % n] -= gout[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::mul(const Tensor<S>& a, const Tensor<S>& b) {
  ensure_live();
  Tensor<S> out = binary_ew(a, b, EwKind::Mul, "mul");
  check_output(out, "mul");
  if (opt_.recording && (a.node >= 0 || b.node >= 0)) {
    const int pa = a.node, pb = b.node;
    std::vector<S> adata = a.data, bdata = b.data;
    out.node = push(out.shape, false, [pa, pb, adata, bdata](Graph& g, const std::vector<S>& gout) {
      auto side = [&gout](Graph& gg, int node, const std::vector<S>& other) {
        if (node < 0) return;
        auto& buf = gg.grad_buffer(node);
        const std::size_t n = buf.size();
        const std::size_t rn = other.size();
        for (std::size_t i = 0; i < gout.size(); ++i) buf[i % n] += gout[i] * other[i % rn];
      };
      side(g, pa, bdata);
      side(g, pb, adata);
    });
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::unary_result(const Tensor<S>& x, std::vector<S> out,
                                 std::function<void(Graph&, const std::vector<S>&)> back,
                                 const char* op) {
  Tensor<S> t(x.shape, std::move(out));
  check_output(t, op);
  if (opt_.recording && x.node >= 0) t.node = push(t.shape, false, std::move(back));
  return t;
}

template <typename S>
Tensor<S> Graph<S>::sigmoid(const Tensor<S>& x) {
  ensure_live();
  std::vector<S> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = S(1) / (S(1) + std::exp(-x.data[i]));
  }
  const int px = x.node;
  std::vector<S> saved = out;
  return unary_result(x, std::move(out),
                      [px, saved](Graph& g, const std::vector<S>& gout) {
                        auto& buf = g.grad_buffer(px);
                        for (std::size_t i = 0; i < gout.size(); ++i) {
                          buf[i] += gout[i] * saved[i] * (S(1) - saved[i]);
                        }
                      },
                      "sigmoid");
}

template <typename S>
Tensor<S> Graph<S>::tanh(const Tensor<S>& x) {
  ensure_live();
  std::vector<S> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data[i]);
  const int px = x.node;
  std::vector<S> saved = out;
  return unary_result(x, std::move(out),
                      [px, saved](Graph& g, const std::vector<S>& gout) {
                        auto& buf = g.grad_buffer(px);
                        for (std::size_t i = 0; i < gout.size(); ++i) {
                          buf[i] += gout[i] * (S(1) - saved[i] * saved[i]);
                        }
                      },
                      "tanh");
}

template <typename S>
Tensor<S> Graph<S>::scale(const Tensor<S>& x, S factor) {
  ensure_live();
  std::vector<S> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data[i] * factor;
  const int px = x.node;
  return unary_result(x, std::move(out),
                      [px, factor](Graph& g, const std::vector<S>& gout) {
                        auto& buf = g.grad_buffer(px);
                        for (std::size_t i = 0; i < gout.size(); ++i) buf[i] += gout[i] * factor;
                      },
                      "scale");
}

template <typename S>
Tensor<S> Graph<S>::sum(const Tensor<S>& x) {
  ensure_live();
  S total = 0;
  for (S v : x.data) total += v;
  Tensor<S> out = Tensor<S>::scalar(total);
  check_output(out, "sum");
  if (opt_.recording && x.node >= 0) {
    const int px = x.node;
    const std::size_t n = x.numel();
    out.node = push(out.shape, false, [px, n](Graph& g, const std::vector<S>& gout) {
      auto& buf = g.grad_buffer(px);
      for (std::size_t i = 0; i < n; ++i) buf[i] += gout[0];
    });
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::reshape(const Tensor<S>& x, Shape shape) {
  ensure_live();
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape) + " as " +
                     shape_to_string(shape));
  }
  Tensor<S> out(shape, x.data);
  if (opt_.recording && x.node >= 0) {
    const int px = x.node;
    out.node = push(out.shape, false, [px](Graph& g, const std::vector<S>& gout) {
      auto& buf = g.grad_buffer(px);
      for (std::size_t i = 0; i < gout.size(); ++i) buf[i] += gout[i];
    });
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::transpose(const Tensor<S>& x) {
  ensure_live();
  x.require_rank2();
  const std::size_t r = x.shape[0], c = x.shape[1];
  Tensor<S> out = Tensor<S>::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = x.data[i * c + j];
  }
  if (opt_.recording && x.node >= 0) {
    const int px = x.node;
    out.node = push(out.shape, false, [px, r, c](Graph& g, const std::vector<S>& gout) {
      auto& buf = g.grad_buffer(px);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) buf[i * c + j] += gout[j * r + i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::concat_cols(const std::vector<Tensor<S>>& parts) {
  ensure_live();
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) {
      throw ShapeError("concat_cols: row counts disagree (" + shape_to_string(p.shape) + ")");
    }
    total += p.cols();
  }
  Tensor<S> out = Tensor<S>::zeros({r, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(p.data.begin() + i * c, c, out.data.begin() + i * total + off);
    }
    off += c;
  }
  bool tracked = false;
  for (const auto& p : parts) tracked = tracked || p.node >= 0;
  if (opt_.recording && tracked) {
    struct Part {
      int node;
      std::size_t cols;
    };
    std::vector<Part> meta;
    for (const auto& p : parts) meta.push_back({p.node, p.cols()});
    out.node = push(out.shape, false, [meta, r, total](Graph& g, const std::vector<S>& gout) {
      std::size_t off = 0;
      for (const auto& part : meta) {
        if (part.node >= 0) {
          auto& buf = g.grad_buffer(part.node);
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < part.cols; ++j) {
              buf[i * part.cols + j] += gout[i * total + off + j];
            }
          }
        }
        off += part.cols;
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::concat_rows(const std::vector<Tensor<S>>& parts) {
  ensure_live();
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) {
      throw ShapeError("concat_rows: column counts disagree (" + shape_to_string(p.shape) + ")");
    }
    total += p.rows();
  }
  Tensor<S> out = Tensor<S>::zeros({total, c});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + off);
    off += p.numel();
  }
  bool tracked = false;
  for (const auto& p : parts) tracked = tracked || p.node >= 0;
  if (opt_.recording && tracked) {
    struct Part {
      int node;
      std::size_t numel;
    };
    std::vector<Part> meta;
    for (const auto& p : parts) meta.push_back({p.node, p.numel()});
    out.node = push(out.shape, false, [meta](Graph& g, const std::vector<S>& gout) {
      std::size_t off = 0;
      for (const auto& part : meta) {
        if (part.node >= 0) {
          auto& buf = g.grad_buffer(part.node);
          for (std::size_t i = 0; i < part.numel; ++i) buf[i] += gout[off + i];
        }
        off += part.numel;
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::slice_cols(const Tensor<S>& x, std::size_t begin, std::size_t count) {
  ensure_live();
  const std::size_t r = x.rows(), c = x.cols();
  if (begin + count > c) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") exceeds " + shape_to_string(x.shape));
  }
  Tensor<S> out = Tensor<S>::zeros({r, count});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(x.data.begin() + i * c + begin, count, out.data.begin() + i * count);
  }
  if (opt_.recording && x.node >= 0) {
    const int px = x.node;
    out.node = push(out.shape, false, [px, r, c, begin, count](Graph& g, const std::vector<S>& gout) {
      auto& buf = g.grad_buffer(px);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < count; ++j) buf[i * c + begin + j] += gout[i * count + j];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::rows(const Tensor<S>& table, const std::vector<std::int32_t>& ids) {
  ensure_live();
  const std::size_t v = table.rows(), e = table.cols();
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw IndexError("rows: id " + std::to_string(id) + " out of range [0, " + std::to_string(v) + ")");
    }
  }
  Tensor<S> out = Tensor<S>::zeros({ids.size(), e});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.data.begin() + static_cast<std::size_t>(ids[i]) * e, e,
                out.data.begin() + i * e);
  }
  if (opt_.recording && table.node >= 0) {
    const int pt = table.node;
    std::vector<std::int32_t> saved_ids = ids;
    out.node = push(out.shape, false, [pt, saved_ids, e](Graph& g, const std::vector<S>& gout) {
      auto& buf = g.grad_buffer(pt);
      for (std::size_t i = 0; i < saved_ids.size(); ++i) {
        S* dst = buf.data() + static_cast<std::size_t>(saved_ids[i]) * e;
        const S* src = gout.data() + i * e;
        for (std::size_t j = 0; j < e; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::tile_rows(const Tensor<S>& x, std::size_t times) {
  ensure_live();
  const std::size_t r = x.rows(), c = x.cols();
  if (times == 0) throw ContractError("tile_rows: times must be positive");
  Tensor<S> out = Tensor<S>::zeros({r * times, c});
  for (std::size_t t = 0; t < times; ++t) {
    std::copy(x.data.begin(), x.data.end(), out.data.begin() + t * r * c);
  }
  if (opt_.recording && x.node >= 0) {
    const int px = x.node;
    const std::size_t block = r * c;
    out.node = push(out.shape, false, [px, times, block](Graph& g, const std::vector<S>& gout) {
      auto& buf = g.grad_buffer(px);
      for (std::size_t t = 0; t < times; ++t) {
        const S* src = gout.data() + t * block;
        for (std::size_t i = 0; i < block; ++i) buf[i] += src[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::block_weighted_sum(const Tensor<S>& weights, const Tensor<S>& values) {
  ensure_live();
  const std::size_t b = weights.rows(), t = weights.cols();
  const std::size_t d = values.cols();
  if (values.rows() != b * t) {
    throw ShapeError("block_weighted_sum: values " + shape_to_string(values.shape) +
                     " do not match weights " + shape_to_string(weights.shape));
  }
  ++matmuls_;
  Tensor<S> out = Tensor<S>::zeros({b, d});
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t ti = 0; ti < t; ++ti) {
      const S w = weights.data[bi * t + ti];
      const S* row = values.data.data() + (ti * b + bi) * d;
      S* dst = out.data.data() + bi * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += w * row[j];
    }
  }
  check_output(out, "block_weighted_sum");
  if (opt_.recording && (weights.node >= 0 || values.node >= 0)) {
    const int pw = weights.node, pv = values.node;
    std::vector<S> wdata = weights.data, vdata = values.data;
    out.node = push(out.shape, false,
                    [pw, pv, wdata, vdata, b, t, d](Graph& g, const std::vector<S>& gout) {
                      if (pw >= 0) {
                        auto& buf = g.grad_buffer(pw);
                        for (std::size_t bi = 0; bi < b; ++bi) {
                          for (std::size_t ti = 0; ti < t; ++ti) {
                            const S* row = vdata.data() + (ti * b + bi) * d;
                            const S* go = gout.data() + bi * d;
                            S s = 0;
                            for (std::size_t j = 0; j < d; ++j) s += go[j] * row[j];
                            buf[bi * t + ti] += s;
                          }
                        }
                      }
                      if (pv >= 0) {
                        auto& buf = g.grad_buffer(pv);
                        for (std::size_t bi = 0; bi < b; ++bi) {
                          for (std::size_t ti = 0; ti < t; ++ti) {
                            const S w = wdata[bi * t + ti];
                            const S* go = gout.data() + bi * d;
                            S* dst = buf.data() + (ti * b + bi) * d;
                            for (std::size_t j = 0; j < d; ++j) dst[j] += w * go[j];
                          }
                        }
                      }
                    });
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::masked_softmax(const Tensor<S>& energies, const std::vector<std::uint8_t>& mask) {
  ensure_live();
  const std::size_t r = energies.rows(), n = energies.cols();
  if (mask.size() != r * n) {
    throw ShapeError("masked_softmax: mask size " + std::to_string(mask.size()) +
                     " does not match " + shape_to_string(energies.shape));
  }
  Tensor<S> out = Tensor<S>::zeros({r, n});
  for (std::size_t i = 0; i < r; ++i) {
    S mx = 0;
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[i * n + j]) continue;
      const S v = energies.data[i * n + j];
      mx = any ? std::max(mx, v) : v;
      any = true;
    }
    if (!any) throw ContractError("masked_softmax: row " + std::to_string(i) + " is fully masked");
    S denom = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[i * n + j]) continue;
      const S e = std::exp(energies.data[i * n + j] - mx);
      out.data[i * n + j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (mask[i * n + j]) out.data[i * n + j] /= denom;
    }
  }
  check_output(out, "masked_softmax");
  if (opt_.recording && energies.node >= 0) {
    const int px = energies.node;
    std::vector<S> probs = out.data;
    std::vector<std::uint8_t> m = mask;
    out.node = push(out.shape, false, [px, probs, m, r, n](Graph& g, const std::vector<S>& gout) {
      auto& buf = g.grad_buffer(px);
      for (std::size_t i = 0; i < r; ++i) {
        S dot = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (m[i * n + j]) dot += gout[i * n + j] * probs[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          if (m[i * n + j]) {
            buf[i * n + j] += probs[i * n + j] * (gout[i * n + j] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::softmax_xent(const Tensor<S>& logits, std::span<const std::int32_t> targets,
                                 std::span<const std::uint8_t> mask) {
  ensure_live();
  const std::size_t r = logits.rows(), v = logits.cols();
  if (targets.size() != r || mask.size() != r) {
    throw ShapeError("softmax_xent: expected " + std::to_string(r) + " targets and mask entries");
  }
  for (std::int32_t t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw IndexError("softmax_xent: target " + std::to_string(t) + " out of range [0, " +
                       std::to_string(v) + ")");
    }
  }
  std::size_t active = 0;
  for (std::uint8_t m : mask) active += m ? 1 : 0;

  // Probabilities are kept for the backward pass.
  std::vector<S> probs(r * v, S(0));
  S loss = 0;
  for (std::size_t i = 0; i < r; ++i) {
    if (!mask[i]) continue;
    const S* row = logits.data.data() + i * v;
    S mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    S denom = 0;
    for (std::size_t j = 0; j < v; ++j) {
      const S e = std::exp(row[j] - mx);
      probs[i * v + j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= denom;
    loss -= std::log(probs[i * v + static_cast<std::size_t>(targets[i])]);
  }
  if (active > 0) loss /= static_cast<S>(active);
  Tensor<S> out = Tensor<S>::scalar(loss);
  check_output(out, "softmax_xent");

  if (opt_.recording && logits.node >= 0) {
    const int px = logits.node;
    std::vector<std::int32_t> tg(targets.begin(), targets.end());
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    out.node = push(out.shape, false,
                    [px, probs, tg, m, r, v, active](Graph& g, const std::vector<S>& gout) {
                      if (active == 0) return;
                      auto& buf = g.grad_buffer(px);
                      const S w = gout[0] / static_cast<S>(active);
                      for (std::size_t i = 0; i < r; ++i) {
                        if (!m[i]) continue;
                        for (std::size_t j = 0; j < v; ++j) {
                          S p = probs[i * v + j];
                          if (j == static_cast<std::size_t>(tg[i])) p -= S(1);
                          buf[i * v + j] += w * p;
                        }
                      }
                    });
  }
  return out;
}

template <typename S>
Tensor<S> Graph<S>::dropout(const Tensor<S>& x, double rate, bool training) {
  return dropout(x, rate, training, rng_);
}

template <typename S>
Tensor<S> Graph<S>::dropout(const Tensor<S>& x, double rate, bool training, std::mt19937_64& rng) {
  ensure_live();
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const S keep_scale = S(1.0 / (1.0 - rate));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<S> mask(x.numel());
  std::vector<S> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = unit(rng) < rate ? S(0) : keep_scale;
    out[i] = x.data[i] * mask[i];
  }
  Tensor<S> t(x.shape, std::move(out));
  check_output(t, "dropout");
  if (opt_.recording && x.node >= 0) {
    const int px = x.node;
    t.node = push(t.shape, false, [px, mask](Graph& g, const std::vector<S>& gout) {
      auto& buf = g.grad_buffer(px);
      for (std::size_t i = 0; i < gout.size(); ++i) buf[i] += gout[i] * mask[i];
    });
  }
  return t;
}

template <typename S>
GradientMap<S> Graph<S>::backward(const Tensor<S>& loss) {
  ensure_live();
  if (loss.node < 0) throw ContractError("backward: loss is not tracked in this graph");
  if (shape_numel(nodes_[loss.node].shape) != 1) {
    throw ContractError("backward: loss must be a scalar");
  }
  grads_.assign(nodes_.size(), {});
  grads_[loss.node] = {S(1)};
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    if (grads_[i].empty() || !nodes_[i].back) continue;
    nodes_[i].back(*this, grads_[i]);
  }
  GradientMap<S> out;
  for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
    if (!nodes_[i].parameter) continue;
    if (grads_[i].empty()) {
      out.set(i, Tensor<S>::zeros(nodes_[i].shape));
    } else {
      out.set(i, Tensor<S>(nodes_[i].shape, std::move(grads_[i])));
    }
  }
  grads_.clear();
  consumed_ = true;
  return out;
}

template <typename S>
void Graph<S>::reset() {
  nodes_.clear();
  grads_.clear();
  consumed_ = false;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace atrseq
