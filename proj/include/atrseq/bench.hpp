// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atrseq/cells.hpp"

namespace atrseq {

struct BenchConfig {
  std::size_t hidden = 1000;  // isolated cell steps run at hidden x hidden
  std::size_t batch = 1;
  std::size_t reps = 30;    // timed repetitions, minimum 30
  std::size_t warmup = 5;   // untimed repetitions, minimum 5
  std::vector<CellVariant> variants = {CellVariant::ATR, CellVariant::GRU, CellVariant::LSTM,
                                       CellVariant::RAN, CellVariant::SRNN};
  bool include_loops = true;   // full train/decode loops at desk-scale dims
  std::size_t loop_hidden = 96;
  std::size_t loop_embed = 48;
  std::size_t loop_vocab = 64;
  std::size_t loop_len = 12;
  std::size_t loop_batch = 16;
  std::size_t loop_reps = 8;
};

struct VariantBench {
  std::string name;
  std::size_t cell_parameters = 0;  // one cell at hidden -> hidden
  std::uint64_t matmuls_per_step = 0;
  double step_median_us = 0;
  double step_p10_us = 0;
  double step_p90_us = 0;
  double train_words_per_sec = 0;   // 0 when loops are disabled
  double decode_words_per_sec = 0;
};

struct BenchReport {
  std::string cpu_model;
  std::string compiler;
  std::string element_type;
  int threads = 1;
  std::size_t hidden = 0, batch = 0, reps = 0, warmup = 0;
  std::vector<VariantBench> variants;
};

// Times isolated cell steps (and optionally full seq2seq loops) per variant
// at identical dims, single-threaded, and asserts the per-variant matmul
// counts before timing anything.
BenchReport run_bench(const BenchConfig& cfg);

void write_bench_json(const BenchReport& report, const std::string& path);
void write_bench_csv(const BenchReport& report, const std::string& path);

}  // namespace atrseq
