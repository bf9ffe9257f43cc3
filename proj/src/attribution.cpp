// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#include "atrseq/attribution.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

namespace atrseq {

std::vector<double> AttributionMatrix::reduced() const {
  std::vector<double> out(steps * steps, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t k = 0; k < steps; ++k) {
      double acc = 0;
      for (std::size_t j = 0; j < dim; ++j) acc += std::abs(value(t, k, j));
      out[t * steps + k] = dim == 0 ? 0.0 : acc / static_cast<double>(dim);
    }
  }
  return out;
}

template <typename S>
Rollout rollout(const std::vector<StepTrace<S>>& traces, const std::vector<double>& h0) {
  const std::size_t T = traces.size();
  if (T == 0) throw ContractError("rollout: no traces");
  for (const auto& tr : traces) {
    if (tr.variant != CellVariant::ATR) {
      throw ContractError("rollout: traces must come from an ATR run");
    }
    if (tr.i.rank() != 2 || tr.i.shape[0] != 1) {
      throw ContractError("rollout: traces must come from a batch-1 run");
    }
  }
  const std::size_t d = traces[0].i.cols();
  if (!h0.empty() && h0.size() != d) {
    throw ShapeError("rollout: h0 size does not match the trace dimension");
  }

  auto gate = [](const Tensor<S>& t, std::size_t j) { return static_cast<double>(t.data[j]); };

  Rollout out;
  out.attribution.steps = T;
  out.attribution.dim = d;
  out.attribution.g.assign(T * T * d, 0.0);
  out.states.assign(T, std::vector<double>(d, 0.0));

  std::vector<double> suffix(d);
  for (std::size_t t = 0; t < T; ++t) {
    auto& g = out.attribution.g;
    for (std::size_t j = 0; j < d; ++j) {
      suffix[j] = 1.0;
      g[(t * T + t) * d + j] = gate(traces[t].i, j);
    }
    for (std::size_t k = t; k-- > 0;) {
      for (std::size_t j = 0; j < d; ++j) {
        suffix[j] *= gate(traces[k + 1].f, j);
        g[(t * T + k) * d + j] = gate(traces[k].i, j) * suffix[j];
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k <= t; ++k) {
        acc += g[(t * T + k) * d + j] * gate(traces[k].p, j);
      }
      if (!h0.empty()) {
        acc += suffix[j] * gate(traces[0].f, j) * h0[j];
      }
      out.states[t][j] = acc;
    }
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> dependency_links(const AttributionMatrix& attribution) {
  std::vector<std::pair<std::size_t, std::size_t>> links;
  const std::size_t T = attribution.steps;
  if (T < 2) return links;
  const std::vector<double> reduced = attribution.reduced();
  for (std::size_t t = 1; t < T; ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < t; ++k) {
      if (reduced[t * T + k] >= reduced[t * T + best]) best = k;
    }
    links.emplace_back(t, best);
  }
  return links;
}

std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) return std::nullopt;
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return std::nullopt;
  return cov / std::sqrt(va * vb);
}

template <typename S>
GateStats gate_correlation(const std::vector<std::vector<StepTrace<S>>>& runs) {
  GateStats stats;
  std::size_t max_len = 0;
  for (const auto& run : runs) max_len = std::max(max_len, run.size());
  std::vector<double> sum_i(max_len, 0.0), sum_f(max_len, 0.0);
  std::vector<std::size_t> count(max_len, 0);
  for (const auto& run : runs) {
    for (std::size_t t = 0; t < run.size(); ++t) {
      const auto& tr = run[t];
      if (tr.i.numel() == 0 || tr.f.numel() == 0) {
        throw ContractError("gate_correlation: traces carry no input/forget gates");
      }
      double mi = 0, mf = 0;
      for (std::size_t j = 0; j < tr.i.numel(); ++j) mi += static_cast<double>(tr.i.data[j]);
      for (std::size_t j = 0; j < tr.f.numel(); ++j) mf += static_cast<double>(tr.f.data[j]);
      sum_i[t] += mi / static_cast<double>(tr.i.numel());
      sum_f[t] += mf / static_cast<double>(tr.f.numel());
      ++count[t];
    }
  }
  for (std::size_t t = 0; t < max_len; ++t) {
    if (count[t] == 0) continue;
    stats.mean_input.push_back(sum_i[t] / static_cast<double>(count[t]));
    stats.mean_forget.push_back(sum_f[t] / static_cast<double>(count[t]));
  }
  stats.pearson_r = pearson(stats.mean_input, stats.mean_forget);
  if (!stats.pearson_r) {
    stats.note = stats.mean_input.size() < 2
                     ? "undefined: fewer than two positions"
                     : "undefined: a gate series has zero variance";
  }
  return stats;
}

SurfaceGrid twin_gate_surface(double lo, double hi, std::size_t resolution) {
  if (resolution < 2) throw ConfigError("twin_gate_surface: resolution must be at least 2");
  if (!(lo < hi)) throw ConfigError("twin_gate_surface: bounds must satisfy lo < hi");
  SurfaceGrid grid;
  grid.xs.resize(resolution);
  grid.ys.resize(resolution);
  const double step = (hi - lo) / static_cast<double>(resolution - 1);
  for (std::size_t i = 0; i < resolution; ++i) {
    grid.xs[i] = lo + step * static_cast<double>(i);
    grid.ys[i] = grid.xs[i];
  }
  auto sigma = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  grid.values.resize(resolution * resolution);
  for (std::size_t i = 0; i < resolution; ++i) {
    for (std::size_t j = 0; j < resolution; ++j) {
      const double x = grid.xs[i], y = grid.ys[j];
      grid.values[i * resolution + j] = sigma(x + y) - sigma(x - y);
    }
  }
  return grid;
}

void write_surface_csv(const SurfaceGrid& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write surface file " + path);
  out << "x,y,diff\n";
  out << std::setprecision(10);
  for (std::size_t i = 0; i < grid.xs.size(); ++i) {
    for (std::size_t j = 0; j < grid.ys.size(); ++j) {
      out << grid.xs[i] << ',' << grid.ys[j] << ',' << grid.at(i, j) << '\n';
    }
  }
}

template Rollout rollout<float>(const std::vector<StepTrace<float>>&, const std::vector<double>&);
template Rollout rollout<double>(const std::vector<StepTrace<double>>&, const std::vector<double>&);
template GateStats gate_correlation<float>(const std::vector<std::vector<StepTrace<float>>>&);
template GateStats gate_correlation<double>(const std::vector<std::vector<StepTrace<double>>>&);

}  // namespace atrseq
