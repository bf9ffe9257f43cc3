// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#include "atrseq/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>

#include <json.hpp>

#include "atrseq/corpus.hpp"
#include "atrseq/seq2seq.hpp"

namespace atrseq {

namespace {

std::uint64_t expected_matmuls(CellVariant variant) {
  switch (variant) {
    case CellVariant::SRNN: return 2;
    case CellVariant::ATR: return 2;
    case CellVariant::GRU: return 6;
    case CellVariant::LSTM: return 8;
    case CellVariant::RAN: return 4;
  }
  return 0;
}

std::string read_cpu_model() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    const auto pos = line.find("model name");
    if (pos != std::string::npos) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        std::string name = line.substr(colon + 1);
        while (!name.empty() && name.front() == ' ') name.erase(name.begin());
        return name;
      }
    }
  }
  return "unknown";
}

double percentile(std::vector<double> sorted, double q) {
  const std::size_t idx =
      static_cast<std::size_t>(q * static_cast<double>(sorted.size() - 1) + 0.5);
  return sorted[std::min(idx, sorted.size() - 1)];
}

using Clock = std::chrono::steady_clock;

double elapsed_us(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::micro>(b - a).count();
}

Batch synthetic_batch(const ParallelCorpus& corpus, const Vocab& vocab, std::size_t batch_size) {
  auto batches = make_batches(corpus, vocab, vocab, batch_size, 10'000, 11);
  return batches.front();
}

}  // namespace

BenchReport run_bench(const BenchConfig& cfg) {
  if (cfg.reps < 30) throw ConfigError("bench repetitions must be at least 30");
  if (cfg.warmup < 5) throw ConfigError("bench warmups must be at least 5");
  if (cfg.hidden == 0 || cfg.batch == 0) throw ConfigError("bench dims must be positive");

  BenchReport report;
  report.cpu_model = read_cpu_model();
  report.compiler = __VERSION__;
  report.element_type = "float32";
  report.threads = 1;
  report.hidden = cfg.hidden;
  report.batch = cfg.batch;
  report.reps = cfg.reps;
  report.warmup = cfg.warmup;

  for (CellVariant variant : cfg.variants) {
    VariantBench row;
    row.name = to_string(variant);
    row.matmuls_per_step = count_step_matmuls(variant, cfg.hidden, cfg.hidden);
    if (row.matmuls_per_step != expected_matmuls(variant)) {
      throw Error("bench: " + row.name + " executed " + std::to_string(row.matmuls_per_step) +
                  " matrix transformations per step, expected " +
                  std::to_string(expected_matmuls(variant)));
    }

    std::mt19937_64 rng(99);
    CellParams<float> params = init_params<float>(variant, cfg.hidden, cfg.hidden, rng);
    row.cell_parameters = params.parameter_count();

    GraphOptions opt;
    opt.recording = false;
    opt.checked = false;
    Graph<float> g(opt);
    CellState<float> state = zero_state<float>(variant, cfg.batch, cfg.hidden);
    Tensor<float> x = Tensor<float>::uniform({cfg.batch, cfg.hidden}, -1.0f, 1.0f, rng);

    for (std::size_t i = 0; i < cfg.warmup; ++i) cell_step(g, params, state, x);
    std::vector<double> samples(cfg.reps);
    for (std::size_t i = 0; i < cfg.reps; ++i) {
      const auto t0 = Clock::now();
      cell_step(g, params, state, x);
      samples[i] = elapsed_us(t0, Clock::now());
    }
    std::sort(samples.begin(), samples.end());
    row.step_median_us = percentile(samples, 0.5);
    row.step_p10_us = percentile(samples, 0.1);
    row.step_p90_us = percentile(samples, 0.9);

    if (cfg.include_loops) {
      ParallelCorpus corpus = gen_synthetic(SynthTask::Copy, cfg.loop_vocab, cfg.loop_len,
                                            cfg.loop_len, cfg.loop_batch, 5);
      Vocab vocab = synthetic_vocab(cfg.loop_vocab);
      Batch batch = synthetic_batch(corpus, vocab, cfg.loop_batch);
      std::mt19937_64 mrng(3);
      Seq2SeqModel<float> model =
          init_seq2seq<float>(variant, vocab.size(), vocab.size(), cfg.loop_embed,
                              cfg.loop_hidden, cfg.loop_hidden, mrng);

      std::size_t tokens = 0;
      for (auto m : batch.tgt_mask) tokens += m ? 1 : 0;
      {  // teacher-forced forward + backward
        GraphOptions train_opt;
        train_opt.checked = false;
        train_opt.seed = 7;
        const auto t0 = Clock::now();
        for (std::size_t i = 0; i < cfg.loop_reps; ++i) {
          Graph<float> tg(train_opt);
          Seq2SeqModel<float> bound = bind(tg, model);
          tg.backward(sequence_loss(tg, bound, batch, 0.2, true));
        }
        const double secs = elapsed_us(t0, Clock::now()) / 1e6;
        row.train_words_per_sec = static_cast<double>(tokens * cfg.loop_reps) / secs;
      }
      {
        std::vector<std::int32_t> src(batch.src.begin(), batch.src.begin() + batch.src_len);
        std::size_t emitted = 0;
        const auto t0 = Clock::now();
        for (std::size_t i = 0; i < cfg.loop_reps; ++i) {
          emitted += greedy_decode(model, src, default_max_decode_length(src.size())).tokens.size();
        }
        const double secs = elapsed_us(t0, Clock::now()) / 1e6;
        row.decode_words_per_sec = static_cast<double>(emitted) / secs;
      }
    }
    report.variants.push_back(row);
  }
  return report;
}

void write_bench_json(const BenchReport& report, const std::string& path) {
  nlohmann::json j;
  j["environment"] = {{"cpu", report.cpu_model},
                      {"compiler", report.compiler},
                      {"element_type", report.element_type},
                      {"threads", report.threads}};
  j["config"] = {{"hidden", report.hidden},
                 {"batch", report.batch},
                 {"reps", report.reps},
                 {"warmup", report.warmup}};
  j["variants"] = nlohmann::json::array();
  for (const auto& row : report.variants) {
    j["variants"].push_back({{"name", row.name},
                             {"cell_parameters", row.cell_parameters},
                             {"matmuls_per_step", row.matmuls_per_step},
                             {"step_latency_us",
                              {{"median", row.step_median_us},
                               {"p10", row.step_p10_us},
                               {"p90", row.step_p90_us}}},
                             {"train_words_per_sec", row.train_words_per_sec},
                             {"decode_words_per_sec", row.decode_words_per_sec}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write bench report " + path);
  out << j.dump(2) << "\n";
}

void write_bench_csv(const BenchReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write bench report " + path);
  out << "variant,cell_parameters,matmuls_per_step,step_median_us,step_p10_us,step_p90_us,"
         "train_words_per_sec,decode_words_per_sec\n";
  out << std::setprecision(10);
  for (const auto& row : report.variants) {
    out << row.name << ',' << row.cell_parameters << ',' << row.matmuls_per_step << ','
        << row.step_median_us << ',' << row.step_p10_us << ',' << row.step_p90_us << ','
        << row.train_words_per_sec << ',' << row.decode_words_per_sec << '\n';
  }
}

}  // namespace atrseq
