// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#include "triebeam/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "triebeam/error.hpp"
#include "triebeam/maskgen.hpp"

namespace triebeam {

namespace {

using json = nlohmann::ordered_json;

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

json gc_to_json(const GcReport& r, bool timing) {
  json j;
  j["step"] = r.step;
  j["pre_nodes"] = r.pre_nodes;
  j["marked"] = r.marked;
  j["retained_slots"] = r.retained_slots;
  j["remapped"] = r.remapped;
  j["node_visits"] = r.node_visits;
  if (timing) {
    j["mark_seconds"] = r.mark_seconds;
    j["prune_seconds"] = r.prune_seconds;
    j["compact_seconds"] = r.compact_seconds;
    j["total_seconds"] = r.total_seconds;
  }
  return j;
}

std::vector<double> softmax_row(std::span<const double> row) {
  return softmax_masked(row, AllowRow(row.size(), true));
}

}  // namespace

DecodeReport make_report(const std::string& run_id, const DecodeResult& result,
                         const DecodeConfig& config, const std::string& model_digest) {
  DecodeReport r;
  r.run_id = run_id;
  r.strategy = result.strategy;
  r.beam_width = config.beam_width;
  if (result.strategy == Strategy::kTrieBeam) r.gc_interval = config.gc_interval;
  r.model_digest = model_digest;
  r.tokens = result.best.tokens;
  r.score = result.best.score;
  r.total_steps = result.steps();
  r.prompt_len = result.prompt_len;
  r.peak_entries = result.peak_entries;
  r.final_entries = result.final_entries;
  r.entries_per_token = r.tokens.empty()
                            ? 0.0
                            : static_cast<double>(r.peak_entries) / static_cast<double>(r.tokens.size());
  double forward = 0.0;
  double gc = 0.0;
  for (const StepTrace& s : result.trace) {
    forward += s.step_seconds;
    gc += s.gc_seconds;
  }
  r.steps_per_sec = forward > 0.0 ? static_cast<double>(result.steps()) / forward : 0.0;
  r.gc_time_fraction = forward + gc > 0.0 ? gc / (forward + gc) : 0.0;
  return r;
}

json report_to_json(const DecodeReport& r, bool timing) {
  json j;
  j["run_id"] = r.run_id;
  j["strategy"] = std::string(strategy_name(r.strategy));
  j["beam_width"] = r.beam_width;
  if (r.strategy == Strategy::kTrieBeam) {
    j["gc_interval"] = r.gc_interval ? json(*r.gc_interval) : json("inf");
  } else {
    j["gc_interval"] = nullptr;
  }
  j["model_config_digest"] = r.model_digest;
  j["tokens"] = r.tokens;
  j["score"] = r.score;
  j["total_steps"] = r.total_steps;
  j["prompt_len"] = r.prompt_len;
  j["peak_entries"] = r.peak_entries;
  j["final_entries"] = r.final_entries;
  j["entries_per_token"] = r.entries_per_token;
  if (r.baseline_peak_entries) j["baseline_peak_entries"] = *r.baseline_peak_entries;
  if (r.saved_tokens) j["saved_tokens"] = *r.saved_tokens;
  if (r.mem_ratio) j["mem_ratio"] = *r.mem_ratio;
  if (r.max_divergence) j["max_divergence"] = *r.max_divergence;
  if (r.mean_divergence) j["mean_divergence"] = *r.mean_divergence;
  if (timing) {
    j["steps_per_sec"] = r.steps_per_sec;
    j["gc_time_fraction"] = r.gc_time_fraction;
  }
  return j;
}

json trace_step_to_json(const StepTrace& s, bool timing) {
  json j;
  j["step"] = s.step;
  json choices = json::array();
  for (const BeamChoice& c : s.choices) {
    choices.push_back({{"parent", c.parent}, {"token", c.token}, {"score", c.score}});
  }
  j["choices"] = std::move(choices);
  json rows = json::array();
  for (std::size_t r = 0; r < s.logprobs.rows; ++r) {
    auto row = s.logprobs.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j["logprobs"] = std::move(rows);
  j["entries"] = s.entries;
  j["gc_triggered"] = s.gc_triggered;
  j["gc"] = s.gc ? gc_to_json(*s.gc, timing) : json(nullptr);
  if (timing) {
    j["step_seconds"] = s.step_seconds;
    j["gc_seconds"] = s.gc_seconds;
  }
  return j;
}

std::string trace_to_jsonl(const DecodeResult& result, bool timing) {
  std::string out;
  for (const StepTrace& s : result.trace) {
    out += trace_step_to_json(s, timing).dump();
    out += '\n';
  }
  return out;
}

Divergence logit_divergence(const std::vector<StepTrace>& a, const std::vector<StepTrace>& b) {
  Divergence d;
  const std::size_t n = std::min(a.size(), b.size());
  double sum = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const Matrix& ra = a[s].logprobs;
    const Matrix& rb = b[s].logprobs;
    if (ra.rows != rb.rows || ra.cols != rb.cols) {
      throw Error(ErrorCode::kIncompatibleTraces,
                  "step " + std::to_string(s) + " row shapes differ");
    }
    double step_max = 0.0;
    for (std::size_t r = 0; r < ra.rows; ++r) {
      const auto pa = softmax_row(ra.row(r));
      const auto pb = softmax_row(rb.row(r));
      for (std::size_t v = 0; v < pa.size(); ++v) step_max = std::max(step_max, std::abs(pa[v] - pb[v]));
    }
    d.max = std::max(d.max, step_max);
    sum += step_max;
    ++d.steps_compared;
    bool same = a[s].choices.size() == b[s].choices.size();
    for (std::size_t i = 0; same && i < a[s].choices.size(); ++i) {
      same = a[s].choices[i].parent == b[s].choices[i].parent &&
             a[s].choices[i].token == b[s].choices[i].token;
    }
    if (!same) break;
  }
  d.mean = d.steps_compared ? sum / static_cast<double>(d.steps_compared) : 0.0;
  return d;
}

double memory_ratio(const DecodeReport& trie, const DecodeReport& batch) {
  if (batch.peak_entries == 0) throw Error(ErrorCode::kZeroEntries, "baseline holds no entries");
  return static_cast<double>(trie.peak_entries) / static_cast<double>(batch.peak_entries);
}

bool same_decisions(const DecodeResult& a, const DecodeResult& b, double tol) {
  if (a.trace.size() != b.trace.size() || a.finals.size() != b.finals.size()) return false;
  for (std::size_t s = 0; s < a.trace.size(); ++s) {
    const auto& ca = a.trace[s].choices;
    const auto& cb = b.trace[s].choices;
    if (ca.size() != cb.size()) return false;
    for (std::size_t i = 0; i < ca.size(); ++i) {
      if (ca[i].parent != cb[i].parent || ca[i].token != cb[i].token ||
          std::abs(ca[i].score - cb[i].score) > tol) {
        return false;
      }
    }
  }
  for (std::size_t i = 0; i < a.finals.size(); ++i) {
    if (a.finals[i].tokens != b.finals[i].tokens ||
        a.finals[i].finish_step != b.finals[i].finish_step ||
        std::abs(a.finals[i].score - b.finals[i].score) > tol) {
      return false;
    }
  }
  return a.best.tokens == b.best.tokens && std::abs(a.best.score - b.best.score) <= tol;
}

PairedRun run_paired(const StepModel& model, const DecodeConfig& config,
                     std::span<const TokenId> prompt, const std::string& model_digest,
                     const std::string& run_id) {
  PairedRun run;
  run.trie = trie_beam_search(model, config, prompt);
  run.batch = batch_beam_search(model, config, prompt);
  run.trie_report = make_report(run_id + "/trie", run.trie, config, model_digest);
  run.batch_report = make_report(run_id + "/batch", run.batch, config, model_digest);
  run.divergence = logit_divergence(run.trie.trace, run.batch.trace);
  run.sequences_match = same_decisions(run.trie, run.batch, 1e-9);

  const std::size_t bp = run.batch_report.peak_entries;
  const std::size_t tp = run.trie_report.peak_entries;
  run.trie_report.baseline_peak_entries = bp;
  run.trie_report.saved_tokens = static_cast<long long>(bp) - static_cast<long long>(tp);
  run.trie_report.mem_ratio = memory_ratio(run.trie_report, run.batch_report);
  run.trie_report.max_divergence = run.divergence.max;
  run.trie_report.mean_divergence = run.divergence.mean;
  run.batch_report.saved_tokens = 0;
  return run;
}

std::vector<AblationRow> ablate(const StepModel& model, const DecodeConfig& config,
                                const std::vector<std::vector<TokenId>>& prompts) {
  AblationRow batch{"Original beam search", false, false, 0.0, 0.0, {}};
  AblationRow no_gc{"Trie-based w/o GC", true, false, 0.0, 0.0, {}};
  AblationRow with_gc{"Trie-based with GC", true, true, 0.0, 0.0, {}};

  DecodeConfig never = config;
  never.gc_interval.reset();
  DecodeConfig collected = config;
  if (!collected.gc_interval) collected.gc_interval = 15;

  for (const auto& prompt : prompts) {
    const auto base = batch_beam_search(model, config, prompt);
    const auto plain = trie_beam_search(model, never, prompt);
    const auto gc = trie_beam_search(model, collected, prompt);
    const auto bp = static_cast<long long>(base.peak_entries);
    batch.saved.push_back(bp - static_cast<long long>(base.peak_entries));
    no_gc.saved.push_back(bp - static_cast<long long>(plain.peak_entries));
    with_gc.saved.push_back(bp - static_cast<long long>(gc.peak_entries));
  }
  std::vector<AblationRow> rows = {batch, no_gc, with_gc};
  for (AblationRow& row : rows) {
    const double n = static_cast<double>(row.saved.size());
    if (row.saved.empty()) continue;
    double sum = 0.0;
    for (long long v : row.saved) sum += static_cast<double>(v);
    row.mean_saved = sum / n;
    double sq = 0.0;
    for (long long v : row.saved) sq += std::pow(static_cast<double>(v) - row.mean_saved, 2);
    row.std_saved = row.saved.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
  }
  return rows;
}

namespace {

// Independent expectation for one mask: per row, the set of node ids on the
// leaf's root path plus all prompt nodes, optionally windowed by position,
// turned into columns through each node's slot.
struct MaskOracle {
  std::map<NodeId, std::optional<NodeId>> parent;
  std::map<NodeId, std::size_t> slot;
  std::map<NodeId, std::size_t> position;
  std::set<NodeId> prompt;

  explicit MaskOracle(const Trie& trie) {
    for (const TrieNode& n : trie.nodes()) {
      parent[n.id] = n.parent;
      slot[n.id] = n.slot;
      position[n.id] = n.position;
      if (trie.is_prompt(n.id)) prompt.insert(n.id);
    }
  }

  void ancestors(NodeId id, std::set<NodeId>& out) const {
    out.insert(id);
    if (const auto& p = parent.at(id)) ancestors(*p, out);
  }

  std::set<NodeId> allowed_nodes(NodeId leaf, std::optional<std::size_t> window) const {
    std::set<NodeId> s = prompt;
    ancestors(leaf, s);
    if (window) {
      const std::size_t pos = position.at(leaf);
      std::erase_if(s, [&](NodeId id) { return position.at(id) + *window < pos + 1; });
    }
    return s;
  }
};

std::set<NodeId> row_node_set(const TreeMask& mask, std::size_t r, const Trie& trie) {
  std::set<NodeId> out;
  for (std::size_t c = 0; c < mask.allow.cols(); ++c) {
    if (mask.allow.get(r, c)) out.insert(trie.node_at_slot(c).id);
  }
  return out;
}

}  // namespace

MaskFuzzSummary verify_masks(std::size_t tries, std::uint64_t seed, std::size_t max_nodes) {
  MaskFuzzSummary summary;
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

  auto check = [&](const TreeMask& mask, const Trie& trie, std::optional<std::size_t> window,
                   const char* what) {
    ++summary.masks_checked;
    const MaskOracle oracle(trie);
    bool ok = mask.row_nodes == trie.leaves() && mask.allow.cols() == trie.node_count();
    for (std::size_t r = 0; ok && r < mask.allow.rows(); ++r) {
      AllowRow expected(trie.node_count(), false);
      for (NodeId id : oracle.allowed_nodes(mask.row_nodes[r], window)) {
        expected[oracle.slot.at(id)] = true;
      }
      ok = mask.allow.row(r) == expected;
      if (mask.allow.allowed_count(r) == 0) ++summary.all_false_rows;
    }
    if (!ok) {
      ++summary.mismatches;
      if (summary.failures.size() < 8) {
        summary.failures.push_back(std::string(what) + " mismatch at trie of " +
                                   std::to_string(trie.node_count()) + " nodes");
      }
    }
  };

  for (std::size_t trial = 0; trial < tries; ++trial) {
    ++summary.tries;
    const std::size_t t = 1 + pick(6);
    const std::size_t b = 1 + pick(6);
    const std::size_t vocab = 12;
    std::vector<TokenId> prompt;
    for (std::size_t i = 0; i < t; ++i) prompt.push_back(static_cast<TokenId>(1 + pick(vocab - 1)));

    Trie trie(prompt, TokenId{0});
    KVCacheArena arena({1, 1, 2}, 8);
    auto fill_slots = [&]() {
      for (const TrieNode& n : trie.nodes()) {
        if (!arena.occupied(n.slot)) {
          const double e[2] = {static_cast<double>(n.token), static_cast<double>(n.position)};
          arena.write(0, n.slot, e, e);
        }
      }
    };
    fill_slots();
    (void)trie.serialize();
    TreeMask mask = build_mask(trie, b);
    check(mask, trie, std::nullopt, "build_mask");

    for (std::size_t step = 0; trie.node_count() < max_nodes && !trie.leaves().empty(); ++step) {
      const std::size_t k = 1 + pick(b);
      if (trie.node_count() + k > max_nodes) break;
      const auto leaves = trie.leaves();
      std::vector<Expansion> expansions;
      for (std::size_t i = 0; i < k; ++i) {
        const NodeId parent = leaves[pick(leaves.size())];
        // Token 0 is EOS; keep it rare so tries grow.
        const TokenId tok = pick(10) == 0 ? 0 : static_cast<TokenId>(1 + pick(vocab - 1));
        expansions.push_back({parent, tok, -static_cast<double>(step)});
      }
      const auto new_leaves = trie.update(expansions, step);
      (void)trie.serialize();
      fill_slots();
      if (new_leaves.empty()) break;

      mask = update_mask(mask, trie, new_leaves);
      check(mask, trie, std::nullopt, "update_mask");
      if (!(mask == build_mask(trie, b))) {
        ++summary.mismatches;
        summary.failures.push_back("update_mask differs from build_mask");
      }
      const std::size_t window = 1 + pick(8);
      check(swa_restrict(mask, trie, window), trie, window, "swa_restrict");

      if (pick(3) == 0) {
        std::vector<std::set<NodeId>> before;
        for (std::size_t r = 0; r < mask.allow.rows(); ++r) before.push_back(row_node_set(mask, r, trie));
        collect(trie, arena, mask, b, step);
        check(mask, trie, std::nullopt, "recompute_mask");
        for (std::size_t r = 0; r < mask.allow.rows(); ++r) {
          if (row_node_set(mask, r, trie) != before[r]) {
            ++summary.mismatches;
            summary.failures.push_back("allowed node set changed across collection");
          }
        }
      }
    }
  }
  return summary;
}

GcBenchSummary gc_bench(const StepModel& model, const DecodeConfig& config,
                        std::span<const TokenId> prompt) {
  GcBenchSummary summary;
  const DecodeResult result = trie_beam_search(model, config, prompt);
  std::vector<double> steps;
  std::vector<double> gcs;
  double forward_total = 0.0;
  double gc_total = 0.0;
  for (const StepTrace& s : result.trace) {
    if (s.step_seconds > 0.0) steps.push_back(s.step_seconds);
    forward_total += s.step_seconds;
    if (s.gc_triggered) {
      gcs.push_back(s.gc_seconds);
      gc_total += s.gc_seconds;
      ++summary.gc_events;
    }
  }
  summary.series = result.trace;
  summary.median_step_seconds = median(steps);
  summary.median_gc_seconds = median(gcs);
  summary.gc_to_step_ratio =
      summary.median_step_seconds > 0.0 ? summary.median_gc_seconds / summary.median_step_seconds : 0.0;
  summary.amortized_fraction = forward_total > 0.0 ? gc_total / forward_total : 0.0;
  return summary;
}

std::vector<std::vector<TokenId>> read_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParse, "cannot open prompt file " + path);
  std::vector<std::vector<TokenId>> prompts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_array()) throw Error(ErrorCode::kParse, "");
      std::vector<TokenId> prompt;
      for (const auto& v : j) {
        if (!v.is_number_integer()) throw Error(ErrorCode::kParse, "");
        prompt.push_back(v.get<TokenId>());
      }
      prompts.push_back(std::move(prompt));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kParse,
                  path + ":" + std::to_string(lineno) + ": expected a JSON array of token ids");
    }
  }
  return prompts;
}

}  // namespace triebeam
