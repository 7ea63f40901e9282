// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "triebeam/bench.hpp"
#include "triebeam/error.hpp"
#include "triebeam/workload.hpp"

namespace triebeam {

namespace {

using json = nlohmann::ordered_json;

constexpr double kDivergenceLimit = 1e-6;

constexpr const char* kSwaNote =
    "sliding window applied per branch at branch-relative positions; this is a definition of "
    "windowed tree decoding and it changes the dependency structure relative to an unwindowed "
    "decode";

struct Options {
  std::string model_config;
  std::string prompts;
  std::size_t beam = 3;
  std::string gc_interval = "15";
  std::size_t max_len = 48;
  std::string strategy = "trie_beam";
  std::uint64_t seed = 0;
  std::string attention = "mha";
  std::optional<std::size_t> window;
  std::string out;
  std::string trace;
  bool no_timing = false;
  std::size_t top_k = 50;
  std::string eos = "0";
  std::size_t prompt_len = 8;
  std::size_t num_prompts = 1;
  std::string workload = "toy";
  double convergence = 1.0;
  std::size_t trials = 1000;
};

struct Setup {
  std::unique_ptr<StepModel> model;
  std::string digest;
  std::vector<std::vector<TokenId>> prompts;
  DecodeConfig config;
};

std::optional<std::size_t> parse_interval(const std::string& text) {
  if (text == "inf") return std::nullopt;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size() || v < 1) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidConfig, "--gc-interval expects a positive integer or inf");
  }
}

std::optional<TokenId> parse_eos(const std::string& text) {
  if (text == "none") return std::nullopt;
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<TokenId>(v);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidConfig, "--eos expects a token id or none");
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParse, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Setup make_setup(const Options& o) {
  Setup s;
  s.config.beam_width = o.beam;
  s.config.max_len = o.max_len;
  s.config.gc_interval = parse_interval(o.gc_interval);
  s.config.eos_token = parse_eos(o.eos);
  s.config.top_k = o.top_k;
  s.config.sampler_seed = o.seed;
  const auto strategy = parse_strategy(o.strategy);
  if (!strategy) throw Error(ErrorCode::kInvalidConfig, "unknown strategy " + o.strategy);
  s.config.strategy = *strategy;

  if (o.workload == "convergent") {
    ConvergentWorkload w;
    w.convergence = o.convergence;
    w.seed = o.seed;
    w.eos_token = s.config.eos_token.value_or(0);
    w.prompt_len = o.prompt_len;
    s.model = std::make_unique<HistoryModel>(make_convergent_model(w));
    std::ostringstream digest;
    digest << "convergent:" << w.vocab_size << ':' << w.convergence << ':' << w.seed;
    s.digest = digest.str();
  } else if (o.workload == "toy") {
    ModelConfig mc;
    if (!o.model_config.empty()) {
      mc = parse_model_config(read_file(o.model_config));
    } else if (o.attention == "mha") {
      mc = mha_config(o.seed);
    } else if (o.attention == "gqa") {
      mc = gqa_config(o.seed);
    } else if (o.attention == "swa") {
      mc = swa_config(o.seed);
    } else {
      throw Error(ErrorCode::kInvalidConfig, "unknown attention " + o.attention);
    }
    if (o.window) mc.window = o.window;
    mc.validate();
    s.digest = model_config_digest(mc);
    s.model = std::make_unique<Transformer>(init_weights(mc));
  } else {
    throw Error(ErrorCode::kInvalidConfig, "unknown workload " + o.workload);
  }

  if (!o.prompts.empty()) {
    s.prompts = read_prompts(o.prompts);
  } else {
    const TokenId avoid = s.config.eos_token.value_or(-1);
    s.prompts = random_prompts(o.num_prompts, o.prompt_len, s.model->vocab_size(), o.seed, avoid);
  }
  if (s.prompts.empty()) throw Error(ErrorCode::kEmptyPrompt, "no prompts");
  for (const auto& p : s.prompts) s.config.validate(p.size(), s.model->vocab_size());
  return s;
}

// Writes to `path` when given; stdout otherwise.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw Error(ErrorCode::kParse, "cannot write " + path);
      stream_ = &file_;
    }
  }
  std::ostream& operator*() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

json divergence_json(const Divergence& d) {
  return {{"max", d.max}, {"mean", d.mean}, {"steps_compared", d.steps_compared}};
}

int cmd_decode(const Options& o, std::ostream& out) {
  Setup s = make_setup(o);
  std::ofstream tokens_file;
  if (!o.out.empty()) {
    tokens_file.open(o.out);
    if (!tokens_file) throw Error(ErrorCode::kParse, "cannot write " + o.out);
  }
  std::ofstream trace_file;
  if (!o.trace.empty()) {
    trace_file.open(o.trace);
    if (!trace_file) throw Error(ErrorCode::kParse, "cannot write " + o.trace);
  }
  for (std::size_t i = 0; i < s.prompts.size(); ++i) {
    const DecodeResult r = decode(*s.model, s.config, s.prompts[i]);
    const std::string run_id = "decode-" + std::to_string(i);
    out << report_to_json(make_report(run_id, r, s.config, s.digest), !o.no_timing).dump() << '\n';
    if (tokens_file.is_open()) tokens_file << json(r.best.tokens).dump() << '\n';
    if (trace_file.is_open()) {
      for (const StepTrace& st : r.trace) {
        json j = trace_step_to_json(st, !o.no_timing);
        j["run_id"] = run_id;
        trace_file << j.dump() << '\n';
      }
    }
  }
  return 0;
}

int cmd_compare(const Options& o, std::ostream& out) {
  Setup s = make_setup(o);
  Sink sink(o.out, out);
  std::ofstream trace_file;
  if (!o.trace.empty()) {
    trace_file.open(o.trace);
    if (!trace_file) throw Error(ErrorCode::kParse, "cannot write " + o.trace);
  }
  int status = 0;
  for (std::size_t i = 0; i < s.prompts.size(); ++i) {
    const std::string run_id = "compare-" + std::to_string(i);
    const PairedRun run = run_paired(*s.model, s.config, s.prompts[i], s.digest, run_id);
    json j;
    j["run_id"] = run_id;
    j["trie"] = report_to_json(run.trie_report, !o.no_timing);
    j["batch"] = report_to_json(run.batch_report, !o.no_timing);
    j["divergence"] = divergence_json(run.divergence);
    j["sequences_match"] = run.sequences_match;
    if (s.model->window()) j["note"] = kSwaNote;
    *sink << j.dump() << '\n';
    if (trace_file.is_open()) {
      for (const auto* r : {&run.trie, &run.batch}) {
        for (const StepTrace& st : r->trace) {
          json t = trace_step_to_json(st, !o.no_timing);
          t["run_id"] = run_id + "/" + std::string(strategy_name(r->strategy));
          trace_file << t.dump() << '\n';
        }
      }
    }
    if (!run.sequences_match || run.divergence.max > kDivergenceLimit) status = 1;
  }
  return status;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  Setup s = make_setup(o);
  Sink sink(o.out, out);
  const auto rows = ablate(*s.model, s.config, s.prompts);
  json table = json::array();
  for (const AblationRow& r : rows) {
    table.push_back({{"method", r.name},
                     {"trie", r.trie},
                     {"gc", r.gc},
                     {"saved_tokens_mean", r.mean_saved},
                     {"saved_tokens_std", r.std_saved},
                     {"saved_tokens", r.saved}});
  }
  json j;
  j["beam_width"] = s.config.beam_width;
  j["gc_interval"] = s.config.gc_interval ? json(*s.config.gc_interval) : json(15);
  j["model_config_digest"] = s.digest;
  j["prompts"] = s.prompts.size();
  j["rows"] = std::move(table);
  *sink << j.dump() << '\n';
  return 0;
}

int cmd_verify_mask(const Options& o, std::ostream& out) {
  Sink sink(o.out, out);
  const MaskFuzzSummary m = verify_masks(o.trials, o.seed);
  json j;
  j["tries"] = m.tries;
  j["masks_checked"] = m.masks_checked;
  j["mismatches"] = m.mismatches;
  j["all_false_rows"] = m.all_false_rows;
  j["failures"] = m.failures;
  *sink << j.dump() << '\n';
  return m.mismatches == 0 && m.all_false_rows == 0 ? 0 : 1;
}

int cmd_gc_bench(const Options& o, std::ostream& out) {
  Setup s = make_setup(o);
  s.config.strategy = Strategy::kTrieBeam;
  Sink sink(o.out, out);
  const GcBenchSummary g = gc_bench(*s.model, s.config, s.prompts.front());
  const bool timing = !o.no_timing;
  json series = json::array();
  for (const StepTrace& st : g.series) {
    json p;
    p["step"] = st.step;
    p["entries"] = st.entries;
    p["gc_triggered"] = st.gc_triggered;
    if (st.gc) p["gc_marked"] = st.gc->marked;
    if (timing) {
      p["step_seconds"] = st.step_seconds;
      p["gc_seconds"] = st.gc_seconds;
    }
    series.push_back(std::move(p));
  }
  json j;
  j["beam_width"] = s.config.beam_width;
  j["gc_interval"] = s.config.gc_interval ? json(*s.config.gc_interval) : json("inf");
  j["gc_events"] = g.gc_events;
  if (timing) {
    j["median_step_seconds"] = g.median_step_seconds;
    j["median_gc_seconds"] = g.median_gc_seconds;
    j["gc_to_step_ratio"] = g.gc_to_step_ratio;
    j["amortized_gc_fraction"] = g.amortized_fraction;
  }
  j["series"] = std::move(series);
  *sink << j.dump() << '\n';
  return 0;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--model-config", o.model_config, "model config JSON file");
  cmd->add_option("--prompts", o.prompts, "prompt file, one JSON array of token ids per line");
  cmd->add_option("--beam", o.beam, "beam width")->check(CLI::PositiveNumber);
  cmd->add_option("--gc-interval", o.gc_interval, "collection interval, or inf");
  cmd->add_option("--max-len", o.max_len, "total length limit, prompt included");
  cmd->add_option("--strategy", o.strategy, "greedy | topk | batch_beam | trie_beam");
  cmd->add_option("--seed", o.seed, "model, prompt and sampler seed");
  cmd->add_option("--attention", o.attention, "preset when no model config is given")
      ->check(CLI::IsMember({"mha", "gqa", "swa"}));
  cmd->add_option("--window", o.window, "sliding window size")->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out, "output path");
  cmd->add_option("--trace", o.trace, "step trace path (JSON lines)");
  cmd->add_flag("--no-timing", o.no_timing, "omit wall-clock fields");
  cmd->add_option("--top-k", o.top_k, "k for top-k sampling")->check(CLI::PositiveNumber);
  cmd->add_option("--eos", o.eos, "end-of-sequence token id, or none");
  cmd->add_option("--prompt-len", o.prompt_len, "length of generated prompts")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--num-prompts", o.num_prompts, "number of generated prompts")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--workload", o.workload, "toy | convergent")
      ->check(CLI::IsMember({"toy", "convergent"}));
  cmd->add_option("--convergence", o.convergence, "convergent workload dial in [0, 1]")
      ->check(CLI::Range(0.0, 1.0));
}

void write_error(std::ostream& err, std::string_view code, const std::string& message) {
  err << json{{"error", code}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trie-based beam search on a deterministic toy transformer", "triebeam"};
  app.require_subcommand(1);
  Options o;
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Options&, std::ostream&);
  };
  const Command commands[] = {
      {"decode", "decode each prompt with one strategy", cmd_decode},
      {"compare", "paired trie and batch beam search", cmd_compare},
      {"ablate", "saved KV entries for batch, trie and trie with collection", cmd_ablate},
      {"verify-mask", "randomized tree-mask check", cmd_verify_mask},
      {"gc-bench", "per-step forward and collection timing series", cmd_gc_bench},
  };
  std::vector<CLI::App*> subs;
  for (const Command& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, o);
    if (std::string_view(c.name) == "verify-mask") {
      sub->add_option("--trials", o.trials, "number of random tries");
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << app.help();
    write_error(err, "usage", e.what());
    return 2;
  }

  try {
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (subs[i]->parsed()) return commands[i].run(o, out);
    }
    return 2;
  } catch (const Error& e) {
    write_error(err, error_code_name(e.code()), e.what());
    const bool usage = e.code() == ErrorCode::kInvalidConfig || e.code() == ErrorCode::kParse;
    return usage ? 2 : 1;
  } catch (const std::exception& e) {
    write_error(err, "internal", e.what());
    return 1;
  }
}

int run_cli(int argc, const char* const* argv) { return run_cli(argc, argv, std::cout, std::cerr); }

}  // namespace triebeam
