// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

// Reference computations used as test oracles. They deliberately avoid the
// library's cache, mask and decode code paths.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "triebeam/maskgen.hpp"
#include "triebeam/model.hpp"
#include "triebeam/trie.hpp"

namespace oracle {

using triebeam::Matrix;
using triebeam::NodeId;
using triebeam::TokenId;
using triebeam::WeightBundle;

inline std::vector<double> vec_mat(const std::vector<double>& v, const Matrix& m) {
  std::vector<double> out(m.cols, 0.0);
  for (std::size_t c = 0; c < m.cols; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) s += v[r] * m.at(r, c);
    out[c] = s;
  }
  return out;
}

inline std::vector<double> norm(const std::vector<double>& v, const std::vector<double>& g) {
  double ms = 0.0;
  for (double x : v) ms += x * x;
  ms /= static_cast<double>(v.size());
  const double denom = std::sqrt(ms + 1e-6);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * g[i] / denom;
  return out;
}

// Rotates each head slice of `v` in place at `pos`.
inline void rotate_heads(std::vector<double>& v, std::size_t heads, std::size_t hd,
                         std::size_t pos, double base) {
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < hd / 2; ++i) {
      const double theta = static_cast<double>(pos) *
                           std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      double& a = v[h * hd + 2 * i];
      double& b = v[h * hd + 2 * i + 1];
      const double x = a * std::cos(theta) - b * std::sin(theta);
      const double y = a * std::sin(theta) + b * std::cos(theta);
      a = x;
      b = y;
    }
  }
}

// Full-sequence causal forward with no cache: row p holds the log-probs of
// the token following tokens[0..p]. With a window, position p only sees
// positions p-window+1..p.
inline Matrix full_forward(const WeightBundle& w, const std::vector<TokenId>& tokens,
                           std::optional<std::size_t> window = std::nullopt) {
  const auto& cfg = w.config;
  const std::size_t n = tokens.size();
  const std::size_t hd = cfg.head_dim;
  const std::size_t group = cfg.n_heads / cfg.n_kv_heads;
  std::vector<std::vector<double>> x(n);
  for (std::size_t p = 0; p < n; ++p) {
    auto r = w.embedding.row(static_cast<std::size_t>(tokens[p]));
    x[p].assign(r.begin(), r.end());
  }
  for (const auto& lw : w.layers) {
    std::vector<std::vector<double>> q(n), k(n), v(n);
    for (std::size_t p = 0; p < n; ++p) {
      const auto h = norm(x[p], lw.attn_gain);
      q[p] = vec_mat(h, lw.wq);
      k[p] = vec_mat(h, lw.wk);
      v[p] = vec_mat(h, lw.wv);
      rotate_heads(q[p], cfg.n_heads, hd, p, cfg.rope_base);
      rotate_heads(k[p], cfg.n_kv_heads, hd, p, cfg.rope_base);
    }
    std::vector<std::vector<double>> next = x;
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t first = window && p + 1 > *window ? p + 1 - *window : 0;
      std::vector<double> attn(cfg.n_heads * hd, 0.0);
      for (std::size_t head = 0; head < cfg.n_heads; ++head) {
        const std::size_t kvh = head / group;
        std::vector<double> s;
        for (std::size_t j = first; j <= p; ++j) {
          double d = 0.0;
          for (std::size_t e = 0; e < hd; ++e) d += q[p][head * hd + e] * k[j][kvh * hd + e];
          s.push_back(d / std::sqrt(static_cast<double>(hd)));
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double z = 0.0;
        for (double& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = first; j <= p; ++j) {
          for (std::size_t e = 0; e < hd; ++e) {
            attn[head * hd + e] += s[j - first] / z * v[j][kvh * hd + e];
          }
        }
      }
      const auto o = vec_mat(attn, lw.wo);
      for (std::size_t d = 0; d < cfg.d_model; ++d) next[p][d] += o[d];
      const auto h2 = norm(next[p], lw.ffn_gain);
      auto up = vec_mat(h2, lw.w_up);
      for (double& u : up) u = u / (1.0 + std::exp(-u));
      const auto down = vec_mat(up, lw.w_down);
      for (std::size_t d = 0; d < cfg.d_model; ++d) next[p][d] += down[d];
    }
    x = std::move(next);
  }
  Matrix out(n, cfg.vocab_size);
  for (std::size_t p = 0; p < n; ++p) {
    const auto h = norm(x[p], w.final_gain);
    std::vector<double> logits(cfg.vocab_size);
    for (std::size_t t = 0; t < cfg.vocab_size; ++t) {
      double s = 0.0;
      for (std::size_t d = 0; d < cfg.d_model; ++d) {
        s += h[d] * (w.tied_output ? w.embedding.at(t, d) : w.output.at(d, t));
      }
      logits[t] = s;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    for (std::size_t t = 0; t < cfg.vocab_size; ++t) out.at(p, t) = logits[t] - mx - std::log(z);
  }
  return out;
}

// Node-id sets computed by plain recursion over a parent map snapshot.
struct AncestorOracle {
  std::map<NodeId, std::optional<NodeId>> parent;
  std::map<NodeId, std::size_t> slot;
  std::map<NodeId, std::size_t> position;
  std::set<NodeId> prompt;

  explicit AncestorOracle(const triebeam::Trie& trie) {
    for (const auto& n : trie.nodes()) {
      parent[n.id] = n.parent;
      slot[n.id] = n.slot;
      position[n.id] = n.position;
      if (trie.is_prompt(n.id)) prompt.insert(n.id);
    }
  }

  void collect(NodeId id, std::set<NodeId>& out) const {
    out.insert(id);
    if (parent.at(id)) collect(*parent.at(id), out);
  }

  std::set<NodeId> allowed(NodeId leaf, std::optional<std::size_t> window = std::nullopt) const {
    std::set<NodeId> s = prompt;
    collect(leaf, s);
    if (window) {
      const std::size_t pos = position.at(leaf);
      std::erase_if(s, [&](NodeId id) { return position.at(id) + *window < pos + 1; });
    }
    return s;
  }

  std::set<NodeId> retained(const std::vector<NodeId>& leaves) const {
    std::set<NodeId> s = prompt;
    for (NodeId l : leaves) collect(l, s);
    return s;
  }

  // True when every row of `mask` equals the ancestor-set expectation.
  bool matches(const triebeam::AllowMask& mask, const std::vector<NodeId>& rows,
               std::optional<std::size_t> window = std::nullopt) const {
    if (mask.rows() != rows.size() || mask.cols() != slot.size()) return false;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::vector<bool> expected(mask.cols(), false);
      for (NodeId id : allowed(rows[r], window)) expected[slot.at(id)] = true;
      if (mask.row(r) != expected) return false;
    }
    return true;
  }
};

struct Sequence {
  std::vector<TokenId> tokens;
  double score = 0.0;
};

// Every continuation of `prompt` with exactly `steps` tokens, scored by a
// history -> log-prob function.
inline std::vector<Sequence> enumerate(
    const std::vector<TokenId>& prompt, std::size_t steps, std::size_t vocab,
    const std::function<std::vector<double>(const std::vector<TokenId>&)>& logprobs) {
  std::vector<Sequence> frontier = {{prompt, 0.0}};
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<Sequence> next;
    for (const auto& seq : frontier) {
      const auto lp = logprobs(seq.tokens);
      for (std::size_t t = 0; t < vocab; ++t) {
        Sequence e = seq;
        e.tokens.push_back(static_cast<TokenId>(t));
        e.score += lp[t];
        next.push_back(std::move(e));
      }
    }
    frontier = std::move(next);
  }
  return frontier;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace oracle
