// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "atrseq/cells.hpp"
#include "atrseq/seq2seq.hpp"

namespace atrseq {

struct GradCheckReport {
  double worst_rel_err = 0.0;
  std::string worst_slot;
  std::size_t checked_values = 0;

  bool pass(double threshold = 1e-4) const { return worst_rel_err < threshold; }
};

// Central finite differences (h = 1e-5) against the tape gradients, in
// 64-bit precision, over every weight entry. The loss runs the cell through
// `steps` unrolled steps against fixed random readout weights.
GradCheckReport gradcheck_cell(CellVariant variant, std::size_t input_dim, std::size_t hidden_dim,
                               std::size_t steps, std::uint64_t seed);

// Same check through the full encoder-attention-decoder loss, every
// parameter slot included.
GradCheckReport gradcheck_seq2seq(CellVariant variant, std::size_t embed_dim,
                                  std::size_t enc_hidden, std::size_t attn_dim,
                                  std::size_t src_vocab, std::size_t tgt_vocab,
                                  std::size_t src_len, std::size_t tgt_len, std::uint64_t seed);

}  // namespace atrseq
