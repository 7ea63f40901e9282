// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "triebeam/model.hpp"

namespace triebeam {

using NodeId = std::uint32_t;

struct TrieNode {
  NodeId id = 0;
  TokenId token = 0;
  std::optional<NodeId> parent;
  std::vector<NodeId> children;
  std::size_t position = 0;  // depth along the root path; prompt is 0..t-1
  std::size_t slot = 0;      // KV arena slot
  double score = 0.0;        // cumulative log-prob of the root-to-node sequence
  bool alive = true;         // false once known to be a dead branch tip
};

// One chosen continuation of a current leaf.
struct Expansion {
  NodeId parent_leaf = 0;
  TokenId token = 0;
  double score = 0.0;  // cumulative
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // prompt included
  double score = 0.0;
  std::size_t finish_step = 0;  // step at which it retired (or the final step)

  bool operator==(const Hypothesis&) const = default;
};

// Rows to feed the model for nodes not yet written to the cache.
struct SerializedRows {
  std::vector<NodeId> nodes;
  std::vector<TokenId> tokens;
  std::vector<std::size_t> positions;
  std::vector<std::size_t> slots;

  std::size_t size() const noexcept { return nodes.size(); }
};

// Prefix tree of the prompt and all generated tokens. Nodes are kept in
// insertion order, and between garbage collections a node's slot equals its
// index in that order, so the arena is always dense.
class Trie {
 public:
  Trie(std::span<const TokenId> prompt, std::optional<TokenId> eos_token);

  std::size_t prompt_len() const noexcept { return prompt_len_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  // Number of mask columns / arena slots addressed by the current nodes.
  std::size_t column_count() const noexcept { return nodes_.size(); }
  std::optional<TokenId> eos_token() const noexcept { return eos_; }

  const std::vector<NodeId>& leaves() const noexcept { return leaves_; }
  const std::vector<Hypothesis>& finished() const noexcept { return finished_; }
  std::span<const TrieNode> nodes() const noexcept { return nodes_; }

  bool contains(NodeId id) const { return index_.contains(id); }
  const TrieNode& node(NodeId id) const;
  const TrieNode& node_at_slot(std::size_t slot) const;
  bool is_prompt(NodeId id) const noexcept { return id < prompt_len_; }
  bool is_leaf(NodeId id) const;

  // Emits nodes that have not been emitted before, in insertion order.
  SerializedRows serialize();
  std::size_t pending_rows() const noexcept { return nodes_.size() - serialized_; }

  // Adds one node per non-EOS expansion and makes those nodes the new leaves,
  // in expansion order. EOS expansions retire into finished(). Former leaves
  // that received no child stay in the tree as dead tips until collected.
  // Returns the new leaves.
  std::vector<NodeId> update(std::span<const Expansion> expansions, std::size_t step);

  std::vector<TokenId> path_tokens(NodeId id) const;

  // Highest raw cumulative score over finished hypotheses and current leaves.
  // Ties go to the earlier finish step, then the lexicographically smaller
  // sequence. Leaves count as finishing at `final_step`.
  Hypothesis best_hypothesis(std::size_t final_step) const;

  // Every candidate final hypothesis: finished ones plus current leaves.
  std::vector<Hypothesis> finals(std::size_t final_step) const;

  // Removes nodes outright. Leaves and prompt nodes cannot be removed; slots
  // of survivors are left untouched until remap_slots().
  void remove_nodes(const std::unordered_set<NodeId>& removal);
  // After arena compaction: the node whose slot was old_slots[i] moves to i.
  void remap_slots(std::span<const std::size_t> old_slots);

  // JSON lines, one node per line: {id, token, parent, position, slot, score, alive}.
  std::string dump_jsonl() const;

 private:
  TrieNode& mutable_node(NodeId id);
  void rebuild_index();

  std::vector<TrieNode> nodes_;
  std::unordered_map<NodeId, std::size_t> index_;
  std::vector<NodeId> leaves_;
  std::vector<Hypothesis> finished_;
  std::size_t prompt_len_ = 0;
  std::size_t serialized_ = 0;
  NodeId next_id_ = 0;
  std::optional<TokenId> eos_;
};

Trie initialize_trie(std::span<const TokenId> prompt,
                     std::optional<TokenId> eos_token = std::nullopt);
SerializedRows serialize(Trie& trie);
std::vector<NodeId> update_trie(Trie& trie, std::span<const Expansion> expansions,
                                std::size_t step);
std::vector<TokenId> path_tokens(const Trie& trie, NodeId node);
Hypothesis best_hypothesis(const Trie& trie, std::size_t final_step);

// Lexicographic "is better" order on final hypotheses shared by both decoders.
bool better_hypothesis(const Hypothesis& a, const Hypothesis& b);

}  // namespace triebeam
