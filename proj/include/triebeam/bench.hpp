// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "triebeam/decode.hpp"

namespace triebeam {

struct DecodeReport {
  std::string run_id;
  Strategy strategy = Strategy::kTrieBeam;
  std::size_t beam_width = 1;
  std::optional<std::size_t> gc_interval;
  std::string model_digest;
  std::vector<TokenId> tokens;
  double score = 0.0;
  std::size_t total_steps = 0;
  std::size_t prompt_len = 0;
  std::size_t peak_entries = 0;
  std::size_t final_entries = 0;
  double entries_per_token = 0.0;  // peak entries / (input + output length)
  // Filled for paired runs; the batch report carries its own peak.
  std::optional<std::size_t> baseline_peak_entries;
  std::optional<long long> saved_tokens;
  std::optional<double> mem_ratio;
  double steps_per_sec = 0.0;
  double gc_time_fraction = 0.0;  // gc seconds / (gc + forward seconds)
  std::optional<double> max_divergence;
  std::optional<double> mean_divergence;
};

DecodeReport make_report(const std::string& run_id, const DecodeResult& result,
                         const DecodeConfig& config, const std::string& model_digest);
nlohmann::ordered_json report_to_json(const DecodeReport& report, bool timing);

// One StepTrace per JSON object; GC reports nested.
nlohmann::ordered_json trace_step_to_json(const StepTrace& step, bool timing);
std::string trace_to_jsonl(const DecodeResult& result, bool timing);

struct Divergence {
  double max = 0.0;
  double mean = 0.0;  // mean over compared steps of the per-step maximum
  std::size_t steps_compared = 0;
};

// Softmax-normalized row differences of two paired traces, compared step by
// step up to and including the first step whose chosen expansions differ.
Divergence logit_divergence(const std::vector<StepTrace>& a, const std::vector<StepTrace>& b);

// Peak trie entries over peak batch entries.
double memory_ratio(const DecodeReport& trie, const DecodeReport& batch);

struct PairedRun {
  DecodeResult trie;
  DecodeResult batch;
  DecodeReport trie_report;
  DecodeReport batch_report;
  Divergence divergence;
  bool sequences_match = false;  // best and all finals identical, scores within 1e-9
};

PairedRun run_paired(const StepModel& model, const DecodeConfig& config,
                     std::span<const TokenId> prompt, const std::string& model_digest,
                     const std::string& run_id);

// True when both decoders chose the same expansions at every step and their
// final hypotheses agree token-for-token with scores within `tol`.
bool same_decisions(const DecodeResult& a, const DecodeResult& b, double tol);

struct AblationRow {
  std::string name;
  bool trie = false;
  bool gc = false;
  double mean_saved = 0.0;
  double std_saved = 0.0;
  std::vector<long long> saved;
};

// Rows: batch baseline, trie without GC, trie with config.gc_interval.
std::vector<AblationRow> ablate(const StepModel& model, const DecodeConfig& config,
                                const std::vector<std::vector<TokenId>>& prompts);

struct MaskFuzzSummary {
  std::size_t tries = 0;
  std::size_t masks_checked = 0;
  std::size_t mismatches = 0;
  std::size_t all_false_rows = 0;
  std::vector<std::string> failures;  // first few descriptions
};

// Grows random tries (at most `max_nodes` nodes) with random expansions and
// collections, checking build/update/recompute/window masks against an
// independent ancestor-set computation.
MaskFuzzSummary verify_masks(std::size_t tries, std::uint64_t seed, std::size_t max_nodes = 64);

struct GcBenchSummary {
  std::vector<StepTrace> series;
  std::size_t gc_events = 0;
  double median_step_seconds = 0.0;
  double median_gc_seconds = 0.0;
  double gc_to_step_ratio = 0.0;     // median gc event / median forward pass
  double amortized_fraction = 0.0;   // total gc / total forward time
};

GcBenchSummary gc_bench(const StepModel& model, const DecodeConfig& config,
                        std::span<const TokenId> prompt);

std::vector<std::vector<TokenId>> read_prompts(const std::string& path);

// Command-line entry point. Exit codes: 0 success, 1 oracle or invariant
// failure, 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv);

}  // namespace triebeam
