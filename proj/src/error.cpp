// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#include "triebeam/error.hpp"

namespace triebeam {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kAllBlockedRow: return "all_blocked_row";
    case ErrorCode::kOddLength: return "odd_length";
    case ErrorCode::kInvalidConfig: return "invalid_config";
    case ErrorCode::kSlotCollision: return "slot_collision";
    case ErrorCode::kUnpopulatedSlot: return "unpopulated_slot";
    case ErrorCode::kDoubleWrite: return "double_write";
    case ErrorCode::kCapacityExceeded: return "capacity_exceeded";
    case ErrorCode::kUnoccupiedSlot: return "unoccupied_slot";
    case ErrorCode::kIndexOutOfRange: return "index_out_of_range";
    case ErrorCode::kEmptyPrompt: return "empty_prompt";
    case ErrorCode::kNotALeaf: return "not_a_leaf";
    case ErrorCode::kUnknownNode: return "unknown_node";
    case ErrorCode::kBrokenParentChain: return "broken_parent_chain";
    case ErrorCode::kParentRowNotFound: return "parent_row_not_found";
    case ErrorCode::kStaleSlot: return "stale_slot";
    case ErrorCode::kLiveAncestorRemoval: return "live_ancestor_removal";
    case ErrorCode::kIncompatibleTraces: return "incompatible_traces";
    case ErrorCode::kZeroEntries: return "zero_entries";
    case ErrorCode::kParse: return "parse_error";
    case ErrorCode::kInvariantBreach: return "invariant_breach";
  }
  return "unknown";
}

}  // namespace triebeam
