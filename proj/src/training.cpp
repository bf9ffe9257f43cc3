// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#include "atrseq/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

namespace atrseq {

namespace fs = std::filesystem;

void validate(const TrainConfig& cfg) {
  if (cfg.learning_rate <= 0) throw ConfigError("learning rate must be positive");
  if (cfg.beta1 <= 0 || cfg.beta1 >= 1 || cfg.beta2 <= 0 || cfg.beta2 >= 1) {
    throw ConfigError("adam momentum parameters must lie in (0, 1)");
  }
  if (cfg.adam_eps <= 0) throw ConfigError("adam epsilon must be positive");
  if (cfg.clip_norm <= 0) throw ConfigError("clip norm must be positive");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  if (cfg.max_epochs == 0) throw ConfigError("epoch count must be positive");
  if (cfg.lr_decay <= 0 || cfg.lr_decay > 1) throw ConfigError("lr decay must lie in (0, 1]");
  if (cfg.dropout < 0 || cfg.dropout >= 1) throw ConfigError("dropout must lie in [0, 1)");
  if (cfg.max_train_length == 0) throw ConfigError("max train length must be positive");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto sm = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  };
  return sm(sm(sm(a) ^ b) ^ c);
}

double learning_rate_at(const TrainConfig& cfg, std::uint64_t epoch) {
  return cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(epoch));
}

template <typename S>
std::vector<Tensor<S>*> model_slots(Seq2SeqModel<S>& model) {
  std::vector<Tensor<S>*> slots;
  model.visit([&slots](const std::string&, Tensor<S>& t) { slots.push_back(&t); });
  return slots;
}

template <typename S>
std::vector<std::string> model_slot_names(const Seq2SeqModel<S>& model) {
  std::vector<std::string> names;
  model.visit([&names](const std::string& n, const Tensor<S>&) { names.push_back(n); });
  return names;
}

template <typename S>
AdamState<S> adam_init(const Seq2SeqModel<S>& model) {
  AdamState<S> state;
  model.visit([&state](const std::string&, const Tensor<S>& t) {
    state.m.push_back(Tensor<S>::zeros(t.shape));
    state.v.push_back(Tensor<S>::zeros(t.shape));
  });
  return state;
}

template <typename S>
bool adam_step(const std::vector<Tensor<S>*>& params, const std::vector<Tensor<S>>& grads,
               AdamState<S>& state, double lr, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ContractError("adam_step: parameter, gradient and moment counts disagree");
  }
  for (const auto& g : grads) {
    for (S v : g.data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
  }
  const std::int64_t t = ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape != grads[i].shape) {
      throw ShapeError("adam_step: gradient shape does not match parameter");
    }
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    auto& p = params[i]->data;
    const auto& g = grads[i].data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<S>(mj);
      v[j] = static_cast<S>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      p[j] = static_cast<S>(static_cast<double>(p[j]) - lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
  }
  return true;
}

template <typename S>
double clip_global_norm(std::vector<Tensor<S>>& grads, double max_norm) {
  if (max_norm <= 0) throw ConfigError("clip norm must be positive");
  double sq = 0;
  for (const auto& g : grads) {
    for (S v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) {
      for (S& v : g.data) v = static_cast<S>(static_cast<double>(v) * factor);
    }
  }
  return norm;
}

template <typename S>
void clip_per_value(std::vector<Tensor<S>>& grads, double max_abs) {
  if (max_abs <= 0) throw ConfigError("clip bound must be positive");
  for (auto& g : grads) {
    for (S& v : g.data) {
      if (static_cast<double>(v) > max_abs) v = static_cast<S>(max_abs);
      if (static_cast<double>(v) < -max_abs) v = static_cast<S>(-max_abs);
    }
  }
}

namespace {

std::string epoch_checkpoint_name(std::uint64_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt-epoch-%03llu.atrc", static_cast<unsigned long long>(epoch));
  return buf;
}

struct ValScore {
  double loss = 0;
  double accuracy = 0;
};

ValScore validate_model(const Seq2SeqModel<float>& model, const std::vector<Batch>& batches) {
  double loss_sum = 0, acc_sum = 0;
  std::size_t tokens = 0;
  for (const auto& batch : batches) {
    std::size_t batch_tokens = 0;
    for (auto m : batch.tgt_mask) batch_tokens += m ? 1 : 0;
    if (batch_tokens == 0) continue;
    GraphOptions opt;
    opt.recording = false;
    opt.checked = false;
    Graph<float> g(opt);
    const double loss = sequence_loss(g, model, batch, 0.0, false).value();
    const double acc = token_accuracy(model, batch);
    loss_sum += loss * static_cast<double>(batch_tokens);
    acc_sum += acc * static_cast<double>(batch_tokens);
    tokens += batch_tokens;
  }
  ValScore out;
  if (tokens > 0) {
    out.loss = loss_sum / static_cast<double>(tokens);
    out.accuracy = acc_sum / static_cast<double>(tokens);
  }
  return out;
}

}  // namespace

TrainSummary train_loop(Seq2SeqModel<float>& model, const ParallelCorpus& train_corpus,
                        const ParallelCorpus& val_corpus, const Vocab& src_vocab,
                        const Vocab& tgt_vocab, const TrainConfig& cfg,
                        const std::string& run_dir, const TrainResume* resume) {
  validate(cfg);
  if (train_corpus.size() == 0) throw ConfigError("training corpus is empty");
  fs::create_directories(run_dir);

  const std::uint64_t start_epoch = resume ? resume->progress.epoch : 0;
  if (start_epoch >= cfg.max_epochs) {
    throw ConfigError("resume checkpoint already completed the configured epochs");
  }

  std::ofstream metrics(fs::path(run_dir) / "metrics.jsonl",
                        resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw ConfigError("cannot write metrics file in " + run_dir);

  AdamState<float> moments = resume ? resume->moments : adam_init(model);
  std::vector<Tensor<float>*> slots = model_slots(model);

  // Validation batches are fixed across epochs.
  std::vector<Batch> val_batches =
      val_corpus.size() == 0
          ? std::vector<Batch>{}
          : make_batches(val_corpus, src_vocab, tgt_vocab, cfg.batch_size, cfg.max_train_length,
                         mix_seed(cfg.seed, 0x7a1u, 0), cfg.bucket_window_batches);

  TrainSummary summary;
  summary.steps = resume ? resume->progress.step : 0;
  std::uint64_t global_step = summary.steps;

  for (std::uint64_t epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
    const double lr = learning_rate_at(cfg, epoch);
    std::vector<Batch> batches =
        make_batches(train_corpus, src_vocab, tgt_vocab, cfg.batch_size, cfg.max_train_length,
                     mix_seed(cfg.seed, epoch, 1), cfg.bucket_window_batches);
    if (batches.empty()) throw ConfigError("no training pairs under the length limit");

    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      GraphOptions opt;
      opt.checked = cfg.checked;
      opt.seed = mix_seed(cfg.seed, epoch, 2 + bi);
      Graph<float> g(opt);
      Seq2SeqModel<float> bound = bind(g, model);
      Tensor<float> loss = sequence_loss(g, bound, batches[bi], cfg.dropout, true);
      const double loss_value = static_cast<double>(loss.value());
      GradientMap<float> grad_map = g.backward(loss);

      std::vector<Tensor<float>*> bound_slots = model_slots(bound);
      std::vector<Tensor<float>> grads;
      grads.reserve(bound_slots.size());
      for (const Tensor<float>* slot : bound_slots) grads.push_back(grad_map.at(slot->node));

      ++global_step;
      nlohmann::json record;
      record["epoch"] = epoch;
      record["lr"] = lr;
      record["step"] = global_step;
      if (!std::isfinite(loss_value)) {
        ++summary.skipped_steps;
        record["loss"] = nullptr;
        record["grad_norm"] = nullptr;
        record["skipped"] = true;
        metrics << record.dump() << "\n";
        continue;
      }
      double pre_norm = 0;
      if (cfg.clip_mode == ClipMode::GlobalNorm) {
        pre_norm = clip_global_norm(grads, cfg.clip_norm);
      } else {
        pre_norm = clip_global_norm(grads, std::numeric_limits<double>::infinity());
        clip_per_value(grads, cfg.clip_norm);
      }
      const bool applied = adam_step(slots, grads, moments, lr, cfg);
      record["loss"] = loss_value;
      if (applied) {
        record["grad_norm"] = pre_norm;
      } else {
        ++summary.skipped_steps;
        record["grad_norm"] = nullptr;
        record["skipped"] = true;
      }
      metrics << record.dump() << "\n";
    }

    ValScore val{};
    if (!val_batches.empty()) {
      val = validate_model(model, val_batches);
      nlohmann::json loss_rec{{"epoch", epoch}, {"metric", "val_loss"}, {"value", val.loss}};
      nlohmann::json acc_rec{
          {"epoch", epoch}, {"metric", "val_token_accuracy"}, {"value", val.accuracy}};
      metrics << loss_rec.dump() << "\n" << acc_rec.dump() << "\n";
      summary.final_val_accuracy = val.accuracy;
      summary.final_val_loss = val.loss;
    }
    metrics.flush();

    TrainProgress progress;
    progress.epoch = epoch + 1;
    progress.step = global_step;
    progress.rng_state = std::to_string(mix_seed(cfg.seed, epoch + 1));
    Checkpoint ckpt = to_checkpoint(model, &moments, progress, src_vocab.content_hash(),
                                    tgt_vocab.content_hash());
    const fs::path epoch_path = fs::path(run_dir) / epoch_checkpoint_name(epoch);
    save_checkpoint(ckpt, epoch_path.string());
    summary.last_checkpoint = epoch_path.string();
    if (val_batches.empty() || val.accuracy > summary.best_val_accuracy) {
      summary.best_val_accuracy = val_batches.empty() ? -1.0 : val.accuracy;
      const fs::path best_path = fs::path(run_dir) / "ckpt-best.atrc";
      save_checkpoint(ckpt, best_path.string());
      summary.best_checkpoint = best_path.string();
    }
    summary.epochs_run = epoch + 1 - start_epoch;
    summary.steps = global_step;

    if (cfg.target_accuracy > 0 && !val_batches.empty() && val.accuracy >= cfg.target_accuracy) {
      summary.reached_target = true;
      break;
    }
  }
  return summary;
}

#define ATRSEQ_INSTANTIATE_TRAIN(S)                                                       \
  template std::vector<Tensor<S>*> model_slots<S>(Seq2SeqModel<S>&);                      \
  template std::vector<std::string> model_slot_names<S>(const Seq2SeqModel<S>&);          \
  template AdamState<S> adam_init<S>(const Seq2SeqModel<S>&);                             \
  template bool adam_step<S>(const std::vector<Tensor<S>*>&, const std::vector<Tensor<S>>&, \
                             AdamState<S>&, double, const TrainConfig&);                  \
  template double clip_global_norm<S>(std::vector<Tensor<S>>&, double);                   \
  template void clip_per_value<S>(std::vector<Tensor<S>>&, double);

ATRSEQ_INSTANTIATE_TRAIN(float)
ATRSEQ_INSTANTIATE_TRAIN(double)

#undef ATRSEQ_INSTANTIATE_TRAIN

}  // namespace atrseq
