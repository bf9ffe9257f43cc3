// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#include "atrseq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace atrseq {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'T', 'R', 'C'};

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw CheckpointError("truncated checkpoint file");
  return v;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

std::uint64_t parse_hex64(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint file " + path);
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  const std::string meta = ckpt.metadata.dump();
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(tensor.shape.size()));
    for (std::size_t d : tensor.shape) put_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(tensor.data.data()),
              static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
  }
  if (!out) throw CheckpointError("failed while writing checkpoint file " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint file " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint file: bad magic bytes");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t meta_len = get_u32(in);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), meta_len);
  if (!in) throw CheckpointError("truncated checkpoint file");

  Checkpoint ckpt;
  try {
    ckpt.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw CheckpointError("truncated checkpoint file");
    const std::uint32_t ndim = get_u32(in);
    Shape shape(ndim);
    for (auto& d : shape) d = get_u32(in);
    std::vector<float> data(shape_numel(shape));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw CheckpointError("truncated checkpoint file");
    ckpt.tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  return ckpt;
}

Checkpoint to_checkpoint(const Seq2SeqModel<float>& model, const AdamState<float>* moments,
                         const TrainProgress& progress, std::uint64_t src_vocab_hash,
                         std::uint64_t tgt_vocab_hash) {
  Checkpoint ckpt;
  nlohmann::json meta;
  meta["kind"] = "atrseq-seq2seq";
  meta["variant"] = to_string(model.variant);
  meta["src_vocab"] = model.src_vocab;
  meta["tgt_vocab"] = model.tgt_vocab;
  meta["embed_dim"] = model.embed_dim;
  meta["enc_hidden"] = model.enc_hidden;
  meta["attn_dim"] = model.attn_dim;
  meta["bias"] = model.bias;
  meta["epoch"] = progress.epoch;
  meta["step"] = progress.step;
  meta["rng_state"] = progress.rng_state;
  meta["src_vocab_hash"] = hex64(src_vocab_hash);
  meta["tgt_vocab_hash"] = hex64(tgt_vocab_hash);
  meta["has_optimizer"] = moments != nullptr;
  meta["notes"] = model.notes;
  ckpt.metadata = std::move(meta);

  model.visit([&ckpt](const std::string& name, const Tensor<float>& t) {
    ckpt.tensors.emplace_back(name, t.detached());
  });
  if (moments) {
    ckpt.metadata["adam_step"] = moments->step;
    std::size_t i = 0;
    model.visit([&](const std::string& name, const Tensor<float>&) {
      ckpt.tensors.emplace_back("adam.m." + name, moments->m[i].detached());
      ckpt.tensors.emplace_back("adam.v." + name, moments->v[i].detached());
      ++i;
    });
  }
  return ckpt;
}

Seq2SeqModel<float> model_from_checkpoint(const Checkpoint& ckpt) {
  const auto& meta = ckpt.metadata;
  try {
    if (meta.at("kind") != "atrseq-seq2seq") {
      throw CheckpointError("checkpoint does not hold a seq2seq model");
    }
    std::mt19937_64 rng(0);
    Seq2SeqModel<float> model = init_seq2seq<float>(
        cell_variant_from_string(meta.at("variant").get<std::string>()),
        meta.at("src_vocab").get<std::size_t>(), meta.at("tgt_vocab").get<std::size_t>(),
        meta.at("embed_dim").get<std::size_t>(), meta.at("enc_hidden").get<std::size_t>(),
        meta.at("attn_dim").get<std::size_t>(), rng, meta.at("bias").get<bool>());
    model.notes.clear();
    if (meta.contains("notes")) {
      for (auto it = meta["notes"].begin(); it != meta["notes"].end(); ++it) {
        model.notes[it.key()] = it.value().get<std::string>();
      }
    }
    model.visit([&ckpt](const std::string& name, Tensor<float>& t) {
      const Tensor<float>* stored = ckpt.find(name);
      if (!stored) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
      if (stored->shape != t.shape) {
        throw CheckpointError("checkpoint tensor '" + name + "' has shape " +
                              shape_to_string(stored->shape) + ", expected " +
                              shape_to_string(t.shape));
      }
      t = stored->detached();
    });
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata mismatch: ") + e.what());
  }
}

AdamState<float> moments_from_checkpoint(const Checkpoint& ckpt, const Seq2SeqModel<float>& model) {
  if (!ckpt.metadata.value("has_optimizer", false)) {
    throw CheckpointError("checkpoint carries no optimizer state");
  }
  AdamState<float> state;
  state.step = ckpt.metadata.value("adam_step", std::int64_t{0});
  model.visit([&](const std::string& name, const Tensor<float>& t) {
    const Tensor<float>* m = ckpt.find("adam.m." + name);
    const Tensor<float>* v = ckpt.find("adam.v." + name);
    if (!m || !v) throw CheckpointError("checkpoint is missing optimizer moments for '" + name + "'");
    if (m->shape != t.shape || v->shape != t.shape) {
      throw CheckpointError("optimizer moments for '" + name + "' have the wrong shape");
    }
    state.m.push_back(m->detached());
    state.v.push_back(v->detached());
  });
  return state;
}

TrainProgress progress_from_checkpoint(const Checkpoint& ckpt) {
  TrainProgress p;
  p.epoch = ckpt.metadata.value("epoch", std::uint64_t{0});
  p.step = ckpt.metadata.value("step", std::uint64_t{0});
  p.rng_state = ckpt.metadata.value("rng_state", std::string{});
  return p;
}

void verify_vocab_hashes(const Checkpoint& ckpt, const Vocab& src_vocab, const Vocab& tgt_vocab) {
  const auto stored_src = parse_hex64(ckpt.metadata.value("src_vocab_hash", std::string{"0"}));
  const auto stored_tgt = parse_hex64(ckpt.metadata.value("tgt_vocab_hash", std::string{"0"}));
  if (stored_src != src_vocab.content_hash() || stored_tgt != tgt_vocab.content_hash()) {
    throw CheckpointError("vocabulary does not match the one the checkpoint was trained with");
  }
}

}  // namespace atrseq
