// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "triebeam/numkernel.hpp"
#include "triebeam/trie.hpp"

namespace triebeam {

// Attention mask mirroring the trie: one row per leaf (beam order), one
// column per arena slot. Row i allows the prompt, the ancestors of leaf i
// and leaf i itself.
struct TreeMask {
  std::vector<NodeId> row_nodes;
  AllowMask allow;

  bool operator==(const TreeMask&) const = default;
};

// Bottom-up construction: every row allows the prompt columns, then each leaf
// walks its parent pointers to the chain root allowing each visited column.
TreeMask build_mask(const Trie& trie, std::size_t beam_width);

// Same construction for an arbitrary set of query nodes (used for prefill).
AllowMask build_rows(const Trie& trie, std::span<const NodeId> nodes);

// Derives the mask for `new_leaves` from the mask of their parents: each new
// row copies its parent's row, widens to the current column count and allows
// the leaf's own column.
TreeMask update_mask(const TreeMask& previous, const Trie& trie,
                     std::span<const NodeId> new_leaves);

// Full rebuild after garbage collection; rejects slots that no longer match
// the compacted node order.
TreeMask recompute_mask(const Trie& trie, std::size_t beam_width);

// Sliding-window restriction along each row's branch: blocks columns whose
// node position is below row_position - window + 1.
AllowMask swa_restrict(const AllowMask& mask, std::span<const NodeId> row_nodes,
                       const Trie& trie, std::size_t window);
TreeMask swa_restrict(const TreeMask& mask, const Trie& trie, std::size_t window);

// One line per row, '1' for allowed and '0' for blocked, prefixed by the leaf id.
std::string dump_mask(const TreeMask& mask);

}  // namespace triebeam
