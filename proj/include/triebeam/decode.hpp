// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "triebeam/gc.hpp"
#include "triebeam/model.hpp"
#include "triebeam/trie.hpp"

namespace triebeam {

enum class Strategy { kGreedy, kTopK, kBatchBeam, kTrieBeam };

std::string_view strategy_name(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view name);

struct DecodeConfig {
  std::size_t beam_width = 1;
  std::size_t max_len = 32;  // total length, prompt included
  std::optional<std::size_t> gc_interval = 15;  // nullopt: never collect
  std::optional<TokenId> eos_token = 0;
  Strategy strategy = Strategy::kTrieBeam;
  std::size_t top_k = 50;
  std::uint64_t sampler_seed = 0;

  void validate(std::size_t prompt_len, std::size_t vocab_size) const;
};

struct BeamChoice {
  std::size_t parent = 0;  // beam (row) index in the previous step
  TokenId token = 0;
  double score = 0.0;

  bool operator==(const BeamChoice&) const = default;
};

struct StepTrace {
  std::size_t step = 0;
  std::vector<BeamChoice> choices;
  Matrix logprobs;          // one row per beam the choices were made from
  std::size_t entries = 0;  // KV entries held after the step
  bool gc_triggered = false;
  std::optional<GcReport> gc;
  double step_seconds = 0.0;  // forward pass
  double gc_seconds = 0.0;
};

struct DecodeResult {
  Strategy strategy = Strategy::kTrieBeam;
  std::size_t prompt_len = 0;
  Hypothesis best;
  std::vector<Hypothesis> finals;  // finished plus still-live hypotheses
  std::vector<StepTrace> trace;
  std::size_t peak_entries = 0;
  std::size_t final_entries = 0;

  std::size_t steps() const noexcept { return trace.size(); }
};

// A chosen (beam, token) pair with its cumulative score.
struct Candidate {
  std::size_t beam = 0;
  TokenId token = 0;
  double score = 0.0;
};

// Global top-b over every (beam, token) pair by cumulative score. Ties go to
// the lower token id, then the lower beam index.
std::vector<Candidate> select_top(const Matrix& logprobs, std::span<const double> beam_scores,
                                  std::size_t beam_width);

// Argmax with ties to the lower token id.
TokenId argmax_token(std::span<const double> logprobs);

// Renormalizes the k most probable tokens and draws one.
TokenId sample_topk(std::span<const double> logprobs, std::size_t k, std::mt19937_64& rng);

// Called with (step, mask) just before each trie forward pass. Test hook for
// fault injection; leave empty in normal use.
using MaskHook = std::function<void(std::size_t, AllowMask&)>;

DecodeResult greedy_decode(const StepModel& model, const DecodeConfig& config,
                           std::span<const TokenId> prompt);
DecodeResult topk_sample(const StepModel& model, const DecodeConfig& config,
                         std::span<const TokenId> prompt);
DecodeResult batch_beam_search(const StepModel& model, const DecodeConfig& config,
                               std::span<const TokenId> prompt);
DecodeResult trie_beam_search(const StepModel& model, const DecodeConfig& config,
                              std::span<const TokenId> prompt, const MaskHook& hook = {});

// Dispatches on config.strategy.
DecodeResult decode(const StepModel& model, const DecodeConfig& config,
                    std::span<const TokenId> prompt);

}  // namespace triebeam
