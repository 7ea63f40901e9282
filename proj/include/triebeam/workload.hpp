// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "triebeam/model.hpp"

namespace triebeam {

// Synthetic history-conditioned workload with a convergence dial.
//
// A history is "on track" while every generated token is the favoured token
// of a decisive parent. An on-track history is decisive with probability
// `convergence`: it puts 0.9 on one favoured token and spreads 0.1 over the
// rest. Every other history is diffuse (near-uniform). At convergence = 1 the
// top-b candidates of every step come from a single parent; lower values mix
// in divergent regimes. EOS is effectively never chosen.
struct ConvergentWorkload {
  std::size_t vocab_size = 64;
  std::size_t prompt_len = 32;
  double convergence = 1.0;
  std::uint64_t seed = 0;
  TokenId eos_token = 0;
};

HistoryModel make_convergent_model(const ConvergentWorkload& workload);

// Uniform random prompts drawn from [0, vocab) excluding `avoid` (usually EOS).
std::vector<std::vector<TokenId>> random_prompts(std::size_t count, std::size_t length,
                                                 std::size_t vocab_size, std::uint64_t seed,
                                                 TokenId avoid);

}  // namespace triebeam
