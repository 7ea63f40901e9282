// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#include "triebeam/workload.hpp"

#include <cmath>
#include <random>

#include "triebeam/error.hpp"
#include "triebeam/numkernel.hpp"

namespace triebeam {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

}  // namespace

HistoryModel make_convergent_model(const ConvergentWorkload& w) {
  if (w.vocab_size < 3) throw Error(ErrorCode::kInvalidConfig, "workload vocab too small");
  if (w.eos_token < 0 || static_cast<std::size_t>(w.eos_token) >= w.vocab_size) {
    throw Error(ErrorCode::kInvalidConfig, "workload eos outside vocabulary");
  }
  auto scorer = [w](std::span<const TokenId> history) {
    const std::size_t n = history.size();
    // prefix[i] hashes history[0..i).
    std::vector<std::uint64_t> prefix(n + 1);
    prefix[0] = mix(w.seed);
    for (std::size_t i = 0; i < n; ++i) {
      prefix[i + 1] = mix(prefix[i] ^ static_cast<std::uint64_t>(history[i] + 1));
    }
    auto favoured = [&](std::size_t len) {
      auto tok = static_cast<TokenId>(mix(prefix[len] ^ 0xF00DULL) % (w.vocab_size - 1));
      return tok >= w.eos_token ? tok + 1 : tok;  // never EOS
    };
    // Walk forward from the end of the prompt tracking the decisive chain.
    bool decisive = true;
    for (std::size_t len = std::min(n, w.prompt_len); len <= n; ++len) {
      if (len > w.prompt_len) {
        const bool on_track = decisive && history[len - 1] == favoured(len - 1);
        decisive = on_track;
      }
      if (decisive) decisive = unit(mix(prefix[len] ^ 0xDEC1DEULL)) < w.convergence;
    }

    std::vector<double> lp(w.vocab_size);
    const auto eos = static_cast<std::size_t>(w.eos_token);
    if (decisive) {
      const auto top = static_cast<std::size_t>(favoured(n));
      double total = 0.0;
      std::vector<double> weight(w.vocab_size, 0.0);
      for (std::size_t x = 0; x < w.vocab_size; ++x) {
        if (x == top || x == eos) continue;
        weight[x] = 0.5 + unit(mix(prefix[n] ^ (0xA000ULL + x)));
        total += weight[x];
      }
      for (std::size_t x = 0; x < w.vocab_size; ++x) {
        lp[x] = x == top ? std::log(0.9) : std::log(0.1 * weight[x] / total);
      }
      lp[eos] = -60.0;
    } else {
      std::vector<double> logits(w.vocab_size);
      for (std::size_t x = 0; x < w.vocab_size; ++x) {
        logits[x] = unit(mix(prefix[n] ^ (0xB000ULL + x)));
      }
      logits[eos] = -60.0;
      lp = log_softmax(logits);
    }
    return lp;
  };
  return HistoryModel(w.vocab_size, scorer);
}

std::vector<std::vector<TokenId>> random_prompts(std::size_t count, std::size_t length,
                                                 std::size_t vocab_size, std::uint64_t seed,
                                                 TokenId avoid) {
  if (vocab_size < 2) throw Error(ErrorCode::kInvalidConfig, "vocab too small for prompts");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<TokenId>> out(count);
  for (auto& prompt : out) {
    while (prompt.size() < length) {
      const auto tok = static_cast<TokenId>(rng() % vocab_size);
      if (tok != avoid) prompt.push_back(tok);
    }
  }
  return out;
}

}  // namespace triebeam
