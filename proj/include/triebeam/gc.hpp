// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <unordered_set>

#include "triebeam/kvcache.hpp"
#include "triebeam/maskgen.hpp"
#include "triebeam/trie.hpp"

namespace triebeam {

struct GcReport {
  std::size_t step = 0;
  std::size_t pre_nodes = 0;
  std::size_t marked = 0;
  std::size_t retained_slots = 0;
  std::size_t remapped = 0;  // retained slots whose index changed
  std::size_t node_visits = 0;
  double mark_seconds = 0.0;
  double prune_seconds = 0.0;
  double compact_seconds = 0.0;
  double total_seconds = 0.0;
};

// Generated nodes that are not on the root path of any live leaf. Prompt
// nodes are never marked. `visits`, when given, receives the number of node
// visits made by the bottom-up walk.
std::unordered_set<NodeId> mark(const Trie& trie, std::size_t* visits = nullptr);

// Drops the marked nodes from the tree. Throws if any of them is an ancestor
// of a live leaf.
void prune(Trie& trie, const std::unordered_set<NodeId>& removal);

// mark -> prune -> compact the arena -> renumber slots -> rebuild the mask.
GcReport collect(Trie& trie, KVCacheArena& arena, TreeMask& mask, std::size_t beam_width,
                 std::size_t step = 0);

}  // namespace triebeam
