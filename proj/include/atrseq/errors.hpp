// Copyright 2026 the atrseq authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace atrseq {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand dimensions disagree.
struct ShapeError : Error {
  using Error::Error;
};

// Token/row id out of range.
struct IndexError : Error {
  using Error::Error;
};

// Bad option value, unknown key, unusable input file.
struct ConfigError : Error {
  using Error::Error;
};

// API precondition violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// Non-finite value produced while checked mode is on.
struct NumericError : Error {
  using Error::Error;
};

// Corrupt or mismatched checkpoint file.
struct CheckpointError : Error {
  using Error::Error;
};

}  // namespace atrseq
