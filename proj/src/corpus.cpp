// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#include "atrseq/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace atrseq {

namespace {
const char* kReservedTokens[] = {"<pad>", "<unk>", "<s>", "</s>"};
}

Vocab::Vocab() {
  for (const char* t : kReservedTokens) {
    token_to_id_.emplace(t, static_cast<std::int32_t>(id_to_token_.size()));
    id_to_token_.emplace_back(t);
  }
}

std::int32_t Vocab::add(const std::string& token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  const auto id = static_cast<std::int32_t>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(token);
  return id;
}

std::int32_t Vocab::encode_token(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

std::vector<std::int32_t> Vocab::encode(const TokenSeq& tokens) const {
  std::vector<std::int32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(encode_token(t));
  return ids;
}

const std::string& Vocab::decode_token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw IndexError("vocab id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(id_to_token_.size()) + ")");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

TokenSeq Vocab::decode(const std::vector<std::int32_t>& ids, bool strip_reserved) const {
  TokenSeq out;
  for (std::int32_t id : ids) {
    if (strip_reserved && id >= 0 && static_cast<std::size_t>(id) < kReserved) continue;
    out.push_back(decode_token(id));
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write vocab file " + path);
  for (std::size_t i = kReserved; i < id_to_token_.size(); ++i) out << id_to_token_[i] << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read vocab file " + path);
  Vocab v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) v.add(line);
  }
  return v;
}

std::uint64_t Vocab::content_hash() const {
  std::uint64_t h = 1469598103934665603ull;  // FNV offset basis
  auto mix = [&h](char c) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  };
  for (std::size_t i = kReserved; i < id_to_token_.size(); ++i) {
    for (char c : id_to_token_[i]) mix(c);
    mix('\n');
  }
  return h;
}

Vocab build_vocab(const std::vector<TokenSeq>& corpus, std::size_t cap) {
  if (cap < Vocab::kReserved) {
    throw ConfigError("vocab cap must be at least " + std::to_string(Vocab::kReserved));
  }
  std::map<std::string, std::size_t> freq;
  for (const auto& line : corpus) {
    for (const auto& tok : line) {
      bool reserved = false;
      for (const char* r : kReservedTokens) reserved = reserved || tok == r;
      if (!reserved) ++freq[tok];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  const std::size_t keep = std::min(entries.size(), cap - Vocab::kReserved);
  for (std::size_t i = 0; i < keep; ++i) v.add(entries[i].first);
  return v;
}

SynthTask synth_task_from_string(const std::string& name) {
  if (name == "copy") return SynthTask::Copy;
  if (name == "reverse") return SynthTask::Reverse;
  if (name == "sort") return SynthTask::Sort;
  throw ConfigError("unknown synthetic task '" + name + "' (valid: copy, reverse, sort)");
}

namespace {
std::string symbol_name(std::size_t index, std::size_t alphabet) {
  std::size_t width = 1, span = 10;
  while (span < alphabet) {
    ++width;
    span *= 10;
  }
  std::ostringstream os;
  os << "w";
  std::string digits = std::to_string(index);
  os << std::string(width - digits.size(), '0') << digits;
  return os.str();
}
}  // namespace

Vocab synthetic_vocab(std::size_t vocab_size) {
  if (vocab_size <= Vocab::kReserved) {
    throw ConfigError("synthetic vocab size must exceed " + std::to_string(Vocab::kReserved));
  }
  const std::size_t alphabet = vocab_size - Vocab::kReserved;
  Vocab v;
  for (std::size_t i = 0; i < alphabet; ++i) v.add(symbol_name(i, alphabet));
  return v;
}

ParallelCorpus gen_synthetic(SynthTask task, std::size_t vocab_size, std::size_t len_lo,
                             std::size_t len_hi, std::size_t count, std::uint64_t seed) {
  if (len_lo == 0 || len_hi < len_lo) {
    throw ConfigError("synthetic length range must satisfy 1 <= lo <= hi");
  }
  const std::size_t alphabet = vocab_size - Vocab::kReserved;
  if (vocab_size <= Vocab::kReserved) {
    throw ConfigError("synthetic vocab size must exceed " + std::to_string(Vocab::kReserved));
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len_dist(len_lo, len_hi);
  std::uniform_int_distribution<std::size_t> sym_dist(0, alphabet - 1);

  ParallelCorpus corpus;
  corpus.source.reserve(count);
  corpus.target.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t len = len_dist(rng);
    std::vector<std::size_t> symbols(len);
    for (auto& s : symbols) s = sym_dist(rng);

    std::vector<std::size_t> transformed = symbols;
    switch (task) {
      case SynthTask::Copy: break;
      case SynthTask::Reverse: std::reverse(transformed.begin(), transformed.end()); break;
      case SynthTask::Sort: std::sort(transformed.begin(), transformed.end()); break;
    }
    TokenSeq src, tgt;
    for (std::size_t s : symbols) src.push_back(symbol_name(s, alphabet));
    for (std::size_t s : transformed) tgt.push_back(symbol_name(s, alphabet));
    tgt.push_back(kReservedTokens[Vocab::kEos]);
    corpus.source.push_back(std::move(src));
    corpus.target.push_back(std::move(tgt));
  }
  return corpus;
}

std::vector<Batch> make_batches(const ParallelCorpus& corpus, const Vocab& src_vocab,
                                const Vocab& tgt_vocab, std::size_t batch_size,
                                std::size_t max_len, std::uint64_t seed,
                                std::size_t window_batches, BatchReport* report) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (corpus.source.size() != corpus.target.size()) {
    throw ConfigError("parallel corpus sides have different line counts");
  }
  BatchReport local;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus.source[i].size() > max_len || corpus.target[i].size() > max_len) {
      ++local.dropped_overlength;
      continue;
    }
    if (corpus.source[i].empty() || corpus.target[i].empty()) {
      ++local.dropped_overlength;
      continue;
    }
    keep.push_back(i);
  }
  local.pairs_kept = keep.size();

  std::mt19937_64 rng(seed);
  std::shuffle(keep.begin(), keep.end(), rng);

  // Stable length sort inside windows keeps padding down without undoing the
  // seeded shuffle globally.
  const std::size_t window = std::max<std::size_t>(1, window_batches) * batch_size;
  for (std::size_t begin = 0; begin < keep.size(); begin += window) {
    const std::size_t end = std::min(keep.size(), begin + window);
    std::stable_sort(keep.begin() + begin, keep.begin() + end, [&](std::size_t a, std::size_t b) {
      return corpus.target[a].size() < corpus.target[b].size();
    });
  }

  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < keep.size(); begin += batch_size) {
    const std::size_t end = std::min(keep.size(), begin + batch_size);
    Batch b;
    b.size = end - begin;
    for (std::size_t i = begin; i < end; ++i) {
      b.src_len = std::max(b.src_len, corpus.source[keep[i]].size());
      b.tgt_len = std::max(b.tgt_len, corpus.target[keep[i]].size());
    }
    b.src.assign(b.size * b.src_len, Vocab::kPad);
    b.tgt.assign(b.size * b.tgt_len, Vocab::kPad);
    b.src_mask.assign(b.size * b.src_len, 0);
    b.tgt_mask.assign(b.size * b.tgt_len, 0);
    for (std::size_t row = 0; row < b.size; ++row) {
      const auto& src = corpus.source[keep[begin + row]];
      const auto& tgt = corpus.target[keep[begin + row]];
      b.src_lengths.push_back(src.size());
      b.tgt_lengths.push_back(tgt.size());
      auto src_ids = src_vocab.encode(src);
      auto tgt_ids = tgt_vocab.encode(tgt);
      for (std::size_t j = 0; j < src_ids.size(); ++j) {
        b.src[row * b.src_len + j] = src_ids[j];
        b.src_mask[row * b.src_len + j] = 1;
      }
      for (std::size_t j = 0; j < tgt_ids.size(); ++j) {
        b.tgt[row * b.tgt_len + j] = tgt_ids[j];
        b.tgt_mask[row * b.tgt_len + j] = 1;
      }
    }
    batches.push_back(std::move(b));
  }
  local.batches = batches.size();
  if (report) *report = local;
  return batches;
}

std::vector<TokenSeq> read_token_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read corpus file " + path);
  std::vector<TokenSeq> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    TokenSeq tokens;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    lines.push_back(std::move(tokens));
  }
  return lines;
}

void write_token_lines(const std::string& path, const std::vector<TokenSeq>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write corpus file " + path);
  for (const auto& line : lines) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i) out << ' ';
      out << line[i];
    }
    out << '\n';
  }
}

}  // namespace atrseq
