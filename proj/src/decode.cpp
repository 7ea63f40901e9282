// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#include "triebeam/decode.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "triebeam/error.hpp"
#include "triebeam/maskgen.hpp"

namespace triebeam {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

bool is_eos(const DecodeConfig& config, TokenId token) {
  return config.eos_token && *config.eos_token == token;
}

Matrix last_row(const Matrix& m) {
  Matrix out(1, m.cols);
  auto src = m.row(m.rows - 1);
  std::copy(src.begin(), src.end(), out.data.begin());
  return out;
}

// Greedy and top-k share this single-sequence loop; `pick` chooses the token.
template <typename Pick>
DecodeResult single_sequence(const StepModel& model, const DecodeConfig& config,
                             std::span<const TokenId> prompt, Strategy strategy, Pick&& pick) {
  config.validate(prompt.size(), model.vocab_size());
  DecodeResult result;
  result.strategy = strategy;
  result.prompt_len = prompt.size();

  BatchKVCache cache(model.cache_shape(), 1);
  Matrix logprobs;
  for (std::size_t p = 0; p < prompt.size(); ++p) {
    const TokenId tok = prompt[p];
    logprobs = model.forward_batch(cache, std::span<const TokenId>(&tok, 1), p);
  }
  result.peak_entries = entry_count(cache);

  std::vector<TokenId> tokens(prompt.begin(), prompt.end());
  double score = 0.0;
  bool finished = false;
  std::size_t step = 0;
  for (; prompt.size() + step < config.max_len && !finished; ++step) {
    StepTrace tr;
    tr.step = step;
    tr.logprobs = logprobs;
    const TokenId tok = pick(logprobs.row(0));
    score += logprobs.at(0, static_cast<std::size_t>(tok));
    tokens.push_back(tok);
    tr.choices.push_back({0, tok, score});
    if (is_eos(config, tok)) {
      finished = true;
    } else {
      const auto t0 = Clock::now();
      logprobs = model.forward_batch(cache, std::span<const TokenId>(&tok, 1), prompt.size() + step);
      tr.step_seconds = seconds_since(t0);
    }
    tr.entries = entry_count(cache);
    result.peak_entries = std::max(result.peak_entries, tr.entries);
    result.trace.push_back(std::move(tr));
  }
  // A retired hypothesis finishes at the step that emitted EOS.
  result.best = {tokens, score, finished ? step - 1 : step};
  result.finals = {result.best};
  result.final_entries = entry_count(cache);
  return result;
}

}  // namespace

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kGreedy: return "greedy";
    case Strategy::kTopK: return "topk";
    case Strategy::kBatchBeam: return "batch_beam";
    case Strategy::kTrieBeam: return "trie_beam";
  }
  return "unknown";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::kGreedy, Strategy::kTopK, Strategy::kBatchBeam, Strategy::kTrieBeam}) {
    if (strategy_name(s) == name) return s;
  }
  return std::nullopt;
}

void DecodeConfig::validate(std::size_t prompt_len, std::size_t vocab_size) const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what); };
  if (prompt_len == 0) throw Error(ErrorCode::kEmptyPrompt, "prompt must contain at least one token");
  if (beam_width == 0) fail("beam width must be at least 1");
  if (max_len <= prompt_len) fail("max_len must exceed the prompt length");
  if (gc_interval && *gc_interval == 0) fail("gc interval must be at least 1");
  if (top_k == 0) fail("top_k must be at least 1");
  if (strategy == Strategy::kTopK && top_k > vocab_size) fail("top_k exceeds vocabulary");
  if (eos_token && (*eos_token < 0 || static_cast<std::size_t>(*eos_token) >= vocab_size)) {
    fail("eos token outside vocabulary");
  }
}

std::vector<Candidate> select_top(const Matrix& logprobs, std::span<const double> beam_scores,
                                  std::size_t beam_width) {
  if (logprobs.rows != beam_scores.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "one score per log-prob row expected");
  }
  std::vector<Candidate> all;
  all.reserve(logprobs.rows * logprobs.cols);
  for (std::size_t b = 0; b < logprobs.rows; ++b) {
    for (std::size_t t = 0; t < logprobs.cols; ++t) {
      all.push_back({b, static_cast<TokenId>(t), beam_scores[b] + logprobs.at(b, t)});
    }
  }
  const std::size_t keep = std::min(beam_width, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    [](const Candidate& a, const Candidate& b) {
                      if (a.score != b.score) return a.score > b.score;
                      if (a.token != b.token) return a.token < b.token;
                      return a.beam < b.beam;
                    });
  all.resize(keep);
  return all;
}

TokenId argmax_token(std::span<const double> logprobs) {
  std::size_t best = 0;
  for (std::size_t t = 1; t < logprobs.size(); ++t) {
    if (logprobs[t] > logprobs[best]) best = t;
  }
  return static_cast<TokenId>(best);
}

TokenId sample_topk(std::span<const double> logprobs, std::size_t k, std::mt19937_64& rng) {
  if (k == 0 || k > logprobs.size()) {
    throw Error(ErrorCode::kInvalidConfig, "top-k must be within 1..vocab");
  }
  std::vector<std::size_t> order(logprobs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (logprobs[a] != logprobs[b]) return logprobs[a] > logprobs[b];
                      return a < b;
                    });
  if (k == 1) return static_cast<TokenId>(order[0]);
  std::vector<double> weights(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    weights[i] = std::exp(logprobs[order[i]] - logprobs[order[0]]);
    total += weights[i];
  }
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<TokenId>(order[i]);
  }
  return static_cast<TokenId>(order[k - 1]);
}

DecodeResult greedy_decode(const StepModel& model, const DecodeConfig& config,
                           std::span<const TokenId> prompt) {
  return single_sequence(model, config, prompt, Strategy::kGreedy,
                         [](std::span<const double> row) { return argmax_token(row); });
}

DecodeResult topk_sample(const StepModel& model, const DecodeConfig& config,
                         std::span<const TokenId> prompt) {
  std::mt19937_64 rng(config.sampler_seed);
  const std::size_t k = config.top_k;
  return single_sequence(model, config, prompt, Strategy::kTopK,
                         [&](std::span<const double> row) { return sample_topk(row, k, rng); });
}

DecodeResult batch_beam_search(const StepModel& model, const DecodeConfig& config,
                               std::span<const TokenId> prompt) {
  config.validate(prompt.size(), model.vocab_size());
  const std::size_t t = prompt.size();
  const std::size_t b = config.beam_width;
  DecodeResult result;
  result.strategy = Strategy::kBatchBeam;
  result.prompt_len = t;

  // Prefill a single beam, then let the first reorder replicate it b ways.
  BatchKVCache cache(model.cache_shape(), 1);
  Matrix logprobs;
  for (std::size_t p = 0; p < t; ++p) {
    const TokenId tok = prompt[p];
    logprobs = last_row(model.forward_batch(cache, std::span<const TokenId>(&tok, 1), p));
  }
  result.peak_entries = entry_count(cache);

  struct Beam {
    std::vector<TokenId> tokens;
    double score = 0.0;
  };
  std::vector<Beam> beams = {{{prompt.begin(), prompt.end()}, 0.0}};
  std::vector<Hypothesis> finished;

  std::size_t step = 0;
  while (t + step < config.max_len && finished.size() < b && !beams.empty()) {
    StepTrace tr;
    tr.step = step;
    tr.logprobs = logprobs;

    std::vector<double> scores;
    for (const Beam& beam : beams) scores.push_back(beam.score);
    const auto chosen = select_top(logprobs, scores, b);

    std::vector<Beam> next;
    std::vector<std::size_t> parents;
    std::vector<TokenId> tokens;
    for (const Candidate& c : chosen) {
      tr.choices.push_back({c.beam, c.token, c.score});
      Beam extended{beams[c.beam].tokens, c.score};
      extended.tokens.push_back(c.token);
      if (is_eos(config, c.token)) {
        finished.push_back({std::move(extended.tokens), c.score, step});
        continue;
      }
      parents.push_back(c.beam);
      tokens.push_back(c.token);
      next.push_back(std::move(extended));
    }
    cache.reorder_beams(parents);
    beams = std::move(next);
    if (!beams.empty()) {
      const auto t0 = Clock::now();
      logprobs = model.forward_batch(cache, tokens, t + step);
      tr.step_seconds = seconds_since(t0);
    } else {
      logprobs = Matrix(0, model.vocab_size());
    }
    tr.entries = entry_count(cache);
    result.peak_entries = std::max(result.peak_entries, tr.entries);
    result.trace.push_back(std::move(tr));
    ++step;
  }

  result.finals = finished;
  for (const Beam& beam : beams) result.finals.push_back({beam.tokens, beam.score, step});
  result.best = *std::min_element(result.finals.begin(), result.finals.end(), better_hypothesis);
  result.final_entries = entry_count(cache);
  return result;
}

DecodeResult trie_beam_search(const StepModel& model, const DecodeConfig& config,
                              std::span<const TokenId> prompt, const MaskHook& hook) {
  config.validate(prompt.size(), model.vocab_size());
  const std::size_t t = prompt.size();
  const std::size_t b = config.beam_width;
  const auto window = model.window();
  DecodeResult result;
  result.strategy = Strategy::kTrieBeam;
  result.prompt_len = t;

  Trie trie(prompt, config.eos_token);
  KVCacheArena arena(model.cache_shape(), t + b * (config.max_len - t));

  // Prefill the prompt chain in one pass.
  SerializedRows rows = trie.serialize();
  AllowMask prefill = build_rows(trie, rows.nodes);
  if (window) prefill = swa_restrict(prefill, rows.nodes, trie, *window);
  Matrix logprobs = last_row(model.forward_step(
      arena, {rows.tokens, rows.positions, rows.slots, std::move(prefill)}));
  TreeMask mask = build_mask(trie, b);
  result.peak_entries = entry_count(arena);

  std::size_t step = 0;
  while (t + step < config.max_len && trie.finished().size() < b && !trie.leaves().empty()) {
    StepTrace tr;
    tr.step = step;
    tr.logprobs = logprobs;

    if (config.gc_interval && (t + step) % *config.gc_interval == 0) {
      const GcReport report = collect(trie, arena, mask, b, step);
      tr.gc_triggered = true;
      tr.gc_seconds = report.total_seconds;
      tr.gc = report;
    }

    const auto& leaves = trie.leaves();
    std::vector<double> scores;
    for (NodeId leaf : leaves) scores.push_back(trie.node(leaf).score);
    const auto chosen = select_top(logprobs, scores, b);
    std::vector<Expansion> expansions;
    for (const Candidate& c : chosen) {
      tr.choices.push_back({c.beam, c.token, c.score});
      expansions.push_back({leaves[c.beam], c.token, c.score});
    }

    const auto new_leaves = trie.update(expansions, step);
    mask = update_mask(mask, trie, new_leaves);
    rows = trie.serialize();
    if (rows.nodes != new_leaves) {
      throw Error(ErrorCode::kInvariantBreach, "serialized rows differ from the new leaves");
    }
    if (!new_leaves.empty()) {
      AllowMask allow = window ? swa_restrict(mask, trie, *window).allow : mask.allow;
      if (hook) hook(step, allow);
      const auto t0 = Clock::now();
      logprobs = model.forward_step(
          arena, {rows.tokens, rows.positions, rows.slots, std::move(allow)});
      tr.step_seconds = seconds_since(t0);
    } else {
      logprobs = Matrix(0, model.vocab_size());
    }
    if (arena.len() != trie.node_count()) {
      throw Error(ErrorCode::kInvariantBreach, "arena entries differ from trie node count");
    }
    tr.entries = entry_count(arena);
    result.peak_entries = std::max(result.peak_entries, tr.entries);
    result.trace.push_back(std::move(tr));
    ++step;
  }

  result.finals = trie.finals(step);
  result.best = trie.best_hypothesis(step);
  result.final_entries = entry_count(arena);
  return result;
}

DecodeResult decode(const StepModel& model, const DecodeConfig& config,
                    std::span<const TokenId> prompt) {
  switch (config.strategy) {
    case Strategy::kGreedy: return greedy_decode(model, config, prompt);
    case Strategy::kTopK: return topk_sample(model, config, prompt);
    case Strategy::kBatchBeam: return batch_beam_search(model, config, prompt);
    case Strategy::kTrieBeam: return trie_beam_search(model, config, prompt);
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown strategy");
}

}  // namespace triebeam
