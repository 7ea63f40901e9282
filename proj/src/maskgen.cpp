// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#include "triebeam/maskgen.hpp"

#include <algorithm>

#include "triebeam/error.hpp"

namespace triebeam {

namespace {

std::size_t checked_column(const Trie& trie, const TrieNode& n, std::size_t cols) {
  if (n.slot >= cols || trie.nodes()[n.slot].id != n.id) {
    throw Error(ErrorCode::kStaleSlot,
                "node " + std::to_string(n.id) + " refers to stale slot " + std::to_string(n.slot));
  }
  return n.slot;
}

void allow_branch(const Trie& trie, NodeId start, std::size_t row, AllowMask& mask) {
  std::optional<NodeId> cur = start;
  std::size_t steps = 0;
  while (cur) {
    if (!trie.contains(*cur) || ++steps > trie.node_count()) {
      throw Error(ErrorCode::kBrokenParentChain,
                  "branch from node " + std::to_string(start) + " does not reach the root");
    }
    const TrieNode& n = trie.node(*cur);
    mask.set(row, checked_column(trie, n, mask.cols()), true);
    cur = n.parent;
  }
}

}  // namespace

AllowMask build_rows(const Trie& trie, std::span<const NodeId> nodes) {
  AllowMask mask(nodes.size(), trie.column_count());
  const auto all = trie.nodes();
  for (std::size_t r = 0; r < nodes.size(); ++r) {
    if (!trie.contains(nodes[r])) {
      throw Error(ErrorCode::kBrokenParentChain, "unknown query node " + std::to_string(nodes[r]));
    }
    const std::size_t depth = trie.node(nodes[r]).position;
    // Prompt columns a prompt row may see are its own prefix only.
    for (std::size_t p = 0; p < trie.prompt_len() && p <= depth; ++p) {
      mask.set(r, checked_column(trie, all[p], mask.cols()), true);
    }
    allow_branch(trie, nodes[r], r, mask);
  }
  return mask;
}

TreeMask build_mask(const Trie& trie, std::size_t beam_width) {
  const auto& leaves = trie.leaves();
  if (leaves.size() > beam_width) {
    throw Error(ErrorCode::kInvariantBreach, "more leaves than beam width");
  }
  return {leaves, build_rows(trie, leaves)};
}

TreeMask update_mask(const TreeMask& previous, const Trie& trie,
                     std::span<const NodeId> new_leaves) {
  const std::size_t cols = trie.column_count();
  TreeMask out{{new_leaves.begin(), new_leaves.end()}, AllowMask(new_leaves.size(), cols)};
  for (std::size_t r = 0; r < new_leaves.size(); ++r) {
    const TrieNode& leaf = trie.node(new_leaves[r]);
    if (!leaf.parent) {
      throw Error(ErrorCode::kParentRowNotFound, "new leaf has no parent");
    }
    const auto it = std::find(previous.row_nodes.begin(), previous.row_nodes.end(), *leaf.parent);
    if (it == previous.row_nodes.end()) {
      throw Error(ErrorCode::kParentRowNotFound,
                  "no mask row for parent " + std::to_string(*leaf.parent));
    }
    const std::size_t src = static_cast<std::size_t>(it - previous.row_nodes.begin());
    const std::size_t copy = std::min(previous.allow.cols(), cols);
    for (std::size_t c = 0; c < copy; ++c) out.allow.set(r, c, previous.allow.get(src, c));
    out.allow.set(r, checked_column(trie, leaf, cols), true);
  }
  return out;
}

TreeMask recompute_mask(const Trie& trie, std::size_t beam_width) {
  const auto all = trie.nodes();
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].slot != i) {
      throw Error(ErrorCode::kStaleSlot,
                  "node " + std::to_string(all[i].id) + " still refers to slot " +
                      std::to_string(all[i].slot));
    }
  }
  return build_mask(trie, beam_width);
}

AllowMask swa_restrict(const AllowMask& mask, std::span<const NodeId> row_nodes,
                       const Trie& trie, std::size_t window) {
  if (row_nodes.size() != mask.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "one node per mask row expected");
  }
  AllowMask out = mask;
  if (window == 0) throw Error(ErrorCode::kInvalidConfig, "window must be at least 1");
  for (std::size_t r = 0; r < mask.rows(); ++r) {
    const std::size_t pos = trie.node(row_nodes[r]).position;
    if (pos + 1 <= window) continue;
    const std::size_t first = pos + 1 - window;
    for (std::size_t c = 0; c < mask.cols(); ++c) {
      if (out.get(r, c) && trie.node_at_slot(c).position < first) out.set(r, c, false);
    }
  }
  return out;
}

TreeMask swa_restrict(const TreeMask& mask, const Trie& trie, std::size_t window) {
  return {mask.row_nodes, swa_restrict(mask.allow, mask.row_nodes, trie, window)};
}

std::string dump_mask(const TreeMask& mask) {
  std::string out;
  for (std::size_t r = 0; r < mask.allow.rows(); ++r) {
    out += std::to_string(mask.row_nodes[r]);
    out += ' ';
    for (std::size_t c = 0; c < mask.allow.cols(); ++c) out += mask.allow.get(r, c) ? '1' : '0';
    out += '\n';
  }
  return out;
}

}  // namespace triebeam
