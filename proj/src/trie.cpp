// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#include "triebeam/trie.hpp"

#include <algorithm>
#include <limits>

#include "json.hpp"
#include "triebeam/error.hpp"

namespace triebeam {

Trie::Trie(std::span<const TokenId> prompt, std::optional<TokenId> eos_token)
    : prompt_len_(prompt.size()), eos_(eos_token) {
  if (prompt.empty()) throw Error(ErrorCode::kEmptyPrompt, "prompt must contain at least one token");
  nodes_.reserve(prompt.size());
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    TrieNode n;
    n.id = next_id_++;
    n.token = prompt[i];
    if (i > 0) n.parent = n.id - 1;
    n.position = i;
    n.slot = i;
    nodes_.push_back(n);
    if (i > 0) nodes_[i - 1].children.push_back(n.id);
  }
  leaves_ = {nodes_.back().id};
  rebuild_index();
}

void Trie::rebuild_index() {
  index_.clear();
  index_.reserve(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) index_.emplace(nodes_[i].id, i);
}

const TrieNode& Trie::node(NodeId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error(ErrorCode::kUnknownNode, "node " + std::to_string(id));
  return nodes_[it->second];
}

TrieNode& Trie::mutable_node(NodeId id) {
  return const_cast<TrieNode&>(static_cast<const Trie&>(*this).node(id));
}

const TrieNode& Trie::node_at_slot(std::size_t slot) const {
  if (slot >= nodes_.size() || nodes_[slot].slot != slot) {
    throw Error(ErrorCode::kStaleSlot, "no node owns slot " + std::to_string(slot));
  }
  return nodes_[slot];
}

bool Trie::is_leaf(NodeId id) const {
  return std::find(leaves_.begin(), leaves_.end(), id) != leaves_.end();
}

SerializedRows Trie::serialize() {
  SerializedRows rows;
  for (std::size_t i = serialized_; i < nodes_.size(); ++i) {
    const TrieNode& n = nodes_[i];
    rows.nodes.push_back(n.id);
    rows.tokens.push_back(n.token);
    rows.positions.push_back(n.position);
    rows.slots.push_back(n.slot);
  }
  serialized_ = nodes_.size();
  return rows;
}

std::vector<NodeId> Trie::update(std::span<const Expansion> expansions, std::size_t step) {
  for (const Expansion& e : expansions) {
    if (!is_leaf(e.parent_leaf)) {
      throw Error(ErrorCode::kNotALeaf,
                  "expansion parent " + std::to_string(e.parent_leaf) + " is not a current leaf");
    }
  }
  std::vector<NodeId> next_leaves;
  for (const Expansion& e : expansions) {
    if (eos_ && e.token == *eos_) {
      auto tokens = path_tokens(e.parent_leaf);
      tokens.push_back(e.token);
      finished_.push_back({std::move(tokens), e.score, step});
      continue;
    }
    TrieNode n;
    n.id = next_id_++;
    n.token = e.token;
    n.parent = e.parent_leaf;
    n.position = node(e.parent_leaf).position + 1;
    n.slot = nodes_.size();
    n.score = e.score;
    nodes_.push_back(n);
    index_.emplace(n.id, nodes_.size() - 1);
    mutable_node(e.parent_leaf).children.push_back(n.id);
    next_leaves.push_back(n.id);
  }
  for (NodeId old : leaves_) {
    TrieNode& n = mutable_node(old);
    if (!is_prompt(old) && n.children.empty()) n.alive = false;
  }
  leaves_ = next_leaves;
  return next_leaves;
}

std::vector<TokenId> Trie::path_tokens(NodeId id) const {
  std::vector<TokenId> out;
  std::optional<NodeId> cur = id;
  while (cur) {
    const TrieNode& n = node(*cur);
    out.push_back(n.token);
    cur = n.parent;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

bool better_hypothesis(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.finish_step != b.finish_step) return a.finish_step < b.finish_step;
  return a.tokens < b.tokens;
}

std::vector<Hypothesis> Trie::finals(std::size_t final_step) const {
  std::vector<Hypothesis> out = finished_;
  for (NodeId leaf : leaves_) {
    out.push_back({path_tokens(leaf), node(leaf).score, final_step});
  }
  return out;
}

Hypothesis Trie::best_hypothesis(std::size_t final_step) const {
  const auto all = finals(final_step);
  if (all.empty()) throw Error(ErrorCode::kInvariantBreach, "trie holds no hypothesis");
  return *std::min_element(all.begin(), all.end(), better_hypothesis);
}

void Trie::remove_nodes(const std::unordered_set<NodeId>& removal) {
  if (removal.empty()) return;
  for (NodeId id : removal) {
    if (!contains(id)) throw Error(ErrorCode::kUnknownNode, "node " + std::to_string(id));
    if (is_prompt(id) || is_leaf(id)) {
      throw Error(ErrorCode::kLiveAncestorRemoval,
                  "node " + std::to_string(id) + " is a prompt node or live leaf");
    }
  }
  std::size_t emitted_survivors = 0;
  std::vector<TrieNode> kept;
  kept.reserve(nodes_.size() - removal.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    TrieNode& n = nodes_[i];
    if (removal.contains(n.id)) continue;
    std::erase_if(n.children, [&](NodeId c) { return removal.contains(c); });
    if (i < serialized_) ++emitted_survivors;
    kept.push_back(std::move(n));
  }
  nodes_ = std::move(kept);
  serialized_ = emitted_survivors;
  rebuild_index();
}

void Trie::remap_slots(std::span<const std::size_t> old_slots) {
  if (old_slots.size() != nodes_.size()) {
    throw Error(ErrorCode::kStaleSlot, "slot remapping does not cover every node");
  }
  // Insertion order is slot order, so survivors map positionally.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].slot != old_slots[i]) {
      throw Error(ErrorCode::kStaleSlot,
                  "node " + std::to_string(nodes_[i].id) + " held slot " +
                      std::to_string(nodes_[i].slot) + ", remap expected " +
                      std::to_string(old_slots[i]));
    }
    nodes_[i].slot = i;
  }
}

std::string Trie::dump_jsonl() const {
  std::string out;
  for (const TrieNode& n : nodes_) {
    nlohmann::ordered_json j;
    j["id"] = n.id;
    j["token"] = n.token;
    j["parent"] = n.parent ? nlohmann::ordered_json(*n.parent) : nlohmann::ordered_json(nullptr);
    j["position"] = n.position;
    j["slot"] = n.slot;
    j["score"] = n.score;
    j["alive"] = n.alive;
    out += j.dump();
    out += '\n';
  }
  return out;
}

Trie initialize_trie(std::span<const TokenId> prompt, std::optional<TokenId> eos_token) {
  return Trie(prompt, eos_token);
}

SerializedRows serialize(Trie& trie) { return trie.serialize(); }

std::vector<NodeId> update_trie(Trie& trie, std::span<const Expansion> expansions,
                                std::size_t step) {
  return trie.update(expansions, step);
}

std::vector<TokenId> path_tokens(const Trie& trie, NodeId node) {
  return trie.path_tokens(node);
}

Hypothesis best_hypothesis(const Trie& trie, std::size_t final_step) {
  return trie.best_hypothesis(final_step);
}

}  // namespace triebeam
