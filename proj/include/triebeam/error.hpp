// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace triebeam {

enum class ErrorCode {
  kDimensionMismatch,
  kAllBlockedRow,
  kOddLength,
  kInvalidConfig,
  kSlotCollision,
  kUnpopulatedSlot,
  kDoubleWrite,
  kCapacityExceeded,
  kUnoccupiedSlot,
  kIndexOutOfRange,
  kEmptyPrompt,
  kNotALeaf,
  kUnknownNode,
  kBrokenParentChain,
  kParentRowNotFound,
  kStaleSlot,
  kLiveAncestorRemoval,
  kIncompatibleTraces,
  kZeroEntries,
  kParse,
  kInvariantBreach,
};

std::string_view error_code_name(ErrorCode code);

// All library failures are reported through this type so the CLI can map
// them to a machine-readable error object.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace triebeam
