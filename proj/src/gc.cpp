// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#include "triebeam/gc.hpp"

#include <chrono>
#include <vector>

#include "triebeam/error.hpp"

namespace triebeam {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

std::unordered_set<NodeId> mark(const Trie& trie, std::size_t* visits) {
  std::unordered_set<NodeId> reached;
  std::size_t count = 0;
  for (NodeId leaf : trie.leaves()) {
    std::optional<NodeId> cur = leaf;
    // Stop at the first node another leaf already reached: its whole root
    // path is covered, so every node is visited at most once.
    while (cur && !reached.contains(*cur)) {
      ++count;
      reached.insert(*cur);
      cur = trie.node(*cur).parent;
    }
  }
  std::unordered_set<NodeId> removal;
  for (const TrieNode& n : trie.nodes()) {
    ++count;
    if (!trie.is_prompt(n.id) && !reached.contains(n.id)) removal.insert(n.id);
  }
  if (visits) *visits = count;
  return removal;
}

void prune(Trie& trie, const std::unordered_set<NodeId>& removal) {
  if (removal.empty()) return;
  std::unordered_set<NodeId> live;
  for (NodeId leaf : trie.leaves()) {
    std::optional<NodeId> cur = leaf;
    while (cur && live.insert(*cur).second) cur = trie.node(*cur).parent;
  }
  for (NodeId id : removal) {
    if (live.contains(id)) {
      throw Error(ErrorCode::kLiveAncestorRemoval,
                  "node " + std::to_string(id) + " is an ancestor of a live leaf");
    }
  }
  trie.remove_nodes(removal);
}

GcReport collect(Trie& trie, KVCacheArena& arena, TreeMask& mask, std::size_t beam_width,
                 std::size_t step) {
  if (arena.len() != trie.node_count()) {
    throw Error(ErrorCode::kInvariantBreach, "arena and trie disagree on entry count");
  }
  GcReport report;
  report.step = step;
  report.pre_nodes = trie.node_count();
  const auto start = Clock::now();

  auto t0 = Clock::now();
  std::size_t visits = 0;
  const auto removal = mark(trie, &visits);
  report.mark_seconds = seconds_since(t0);
  report.marked = removal.size();

  t0 = Clock::now();
  prune(trie, removal);
  report.prune_seconds = seconds_since(t0);
  visits += report.pre_nodes;

  t0 = Clock::now();
  std::vector<std::size_t> retained;
  retained.reserve(trie.node_count());
  for (const TrieNode& n : trie.nodes()) retained.push_back(n.slot);
  const auto old_slots = arena.compact(retained);
  trie.remap_slots(old_slots);
  report.compact_seconds = seconds_since(t0);
  visits += trie.node_count();

  mask = recompute_mask(trie, beam_width);
  report.retained_slots = retained.size();
  for (std::size_t i = 0; i < old_slots.size(); ++i) report.remapped += old_slots[i] != i;
  report.node_visits = visits;
  report.total_seconds = seconds_since(start);
  return report;
}

}  // namespace triebeam
