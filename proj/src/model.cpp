// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#include "triebeam/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>
#include <utility>

#include "json.hpp"

#include "triebeam/error.hpp"

namespace triebeam {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Counter-based stream: element `index` of tensor `stream` depends only on
// (seed, stream, index), never on draw order.
class CounterStream {
 public:
  CounterStream(std::uint64_t seed, std::uint64_t stream)
      : key_(splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ULL))) {}

  double uniform(std::uint64_t index, double bound) const {
    const std::uint64_t bits = splitmix64(key_ + index * 0xD1B54A32D192ED03ULL);
    const double unit = static_cast<double>(bits >> 11) * 0x1.0p-53;  // [0, 1)
    return (2.0 * unit - 1.0) * bound;
  }

 private:
  std::uint64_t key_;
};

Matrix random_matrix(std::uint64_t seed, std::uint64_t stream, std::size_t rows,
                     std::size_t cols, std::size_t fan_in) {
  const CounterStream rng(seed, stream);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = rng.uniform(i, bound);
  return m;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

Matrix rows_to_matrix(const std::vector<std::vector<double>>& rows, std::size_t cols) {
  Matrix m(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

struct KVRef {
  std::span<const double> k;
  std::span<const double> v;
};

// Runs every layer for a set of query tokens. `store(i, layer, k, v)` persists
// the rotated key and value of query i; `context(i, layer)` then returns the
// (k, v) entries query i may attend, in ascending position order. Each query
// row is computed independently, so results do not depend on row grouping.
template <typename Store, typename Context>
Matrix run_layers(const WeightBundle& w, std::span<const TokenId> tokens,
                  std::span<const std::size_t> positions, Store&& store, Context&& context) {
  const ModelConfig& cfg = w.config;
  const std::size_t n = tokens.size();
  const std::size_t hd = cfg.head_dim;
  const std::size_t group = cfg.n_heads / cfg.n_kv_heads;

  std::vector<std::vector<double>> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= cfg.vocab_size) {
      throw Error(ErrorCode::kIndexOutOfRange, "token " + std::to_string(tokens[i]));
    }
    auto row = w.embedding.row(static_cast<std::size_t>(tokens[i]));
    x[i].assign(row.begin(), row.end());
  }

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& lw = w.layers[l];
    std::vector<std::vector<double>> normed(n);
    for (std::size_t i = 0; i < n; ++i) normed[i] = rms_norm(x[i], lw.attn_gain, 1e-6);
    const Matrix h = rows_to_matrix(normed, cfg.d_model);
    const Matrix q = matmul(h, lw.wq);
    const Matrix k = matmul(h, lw.wk);
    const Matrix v = matmul(h, lw.wv);

    std::vector<std::vector<double>> q_rot(n);
    for (std::size_t i = 0; i < n; ++i) {
      q_rot[i].reserve(cfg.n_heads * hd);
      for (std::size_t head = 0; head < cfg.n_heads; ++head) {
        auto r = rope_rotate(q.row(i).subspan(head * hd, hd), positions[i], cfg.rope_base);
        q_rot[i].insert(q_rot[i].end(), r.begin(), r.end());
      }
      std::vector<double> k_rot;
      k_rot.reserve(cfg.n_kv_heads * hd);
      for (std::size_t head = 0; head < cfg.n_kv_heads; ++head) {
        auto r = rope_rotate(k.row(i).subspan(head * hd, hd), positions[i], cfg.rope_base);
        k_rot.insert(k_rot.end(), r.begin(), r.end());
      }
      store(i, l, std::span<const double>(k_rot), v.row(i));
    }

    Matrix attn(n, cfg.n_heads * hd);
    for (std::size_t i = 0; i < n; ++i) {
      const std::vector<KVRef> ctx = context(i, l);
      const std::size_t m = ctx.size();
      const AllowRow all(m, true);
      for (std::size_t kvh = 0; kvh < cfg.n_kv_heads; ++kvh) {
        Matrix keys(m, hd);
        for (std::size_t j = 0; j < m; ++j) {
          auto src = ctx[j].k.subspan(kvh * hd, hd);
          std::copy(src.begin(), src.end(), keys.row(j).begin());
        }
        for (std::size_t head = kvh * group; head < (kvh + 1) * group; ++head) {
          const auto probs = attention_scores(
              std::span<const double>(q_rot[i]).subspan(head * hd, hd), keys, all);
          auto out = attn.row(i).subspan(head * hd, hd);
          for (std::size_t j = 0; j < m; ++j) {
            auto val = ctx[j].v.subspan(kvh * hd, hd);
            for (std::size_t d = 0; d < hd; ++d) out[d] += probs[j] * val[d];
          }
        }
      }
    }
    const Matrix projected = matmul(attn, lw.wo);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < cfg.d_model; ++d) x[i][d] += projected.at(i, d);
    }

    for (std::size_t i = 0; i < n; ++i) normed[i] = rms_norm(x[i], lw.ffn_gain, 1e-6);
    Matrix up = matmul(rows_to_matrix(normed, cfg.d_model), lw.w_up);
    for (double& u : up.data) u = silu(u);
    const Matrix down = matmul(up, lw.w_down);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < cfg.d_model; ++d) x[i][d] += down.at(i, d);
    }
  }

  Matrix out(n, cfg.vocab_size);
  for (std::size_t i = 0; i < n; ++i) {
    const auto h = rms_norm(x[i], w.final_gain, 1e-6);
    std::vector<double> logits(cfg.vocab_size);
    if (w.tied_output) {
      for (std::size_t t = 0; t < cfg.vocab_size; ++t) logits[t] = dot(h, w.embedding.row(t));
    } else {
      const Matrix row = matmul(Matrix(1, cfg.d_model, h), w.output);
      logits = row.data;
    }
    const auto lp = log_softmax(logits);
    std::copy(lp.begin(), lp.end(), out.row(i).begin());
  }
  return out;
}

// Checks the StepInput contract against an arena: aligned lengths, fresh and
// unique target slots, and every allowed column either populated or written
// by this very step.
void validate_step_input(const KVCacheArena& cache, const StepInput& in) {
  const std::size_t n = in.token_ids.size();
  if (in.positions.size() != n || in.slot_ids.size() != n || in.allow.rows() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "step input vectors differ in length");
  }
  std::unordered_set<std::size_t> fresh;
  for (std::size_t s : in.slot_ids) {
    if (!fresh.insert(s).second || cache.occupied(s)) {
      throw Error(ErrorCode::kSlotCollision, "slot " + std::to_string(s) + " is not free");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < in.allow.cols(); ++c) {
      if (in.allow.get(i, c) && !cache.occupied(c) && !fresh.contains(c)) {
        throw Error(ErrorCode::kUnpopulatedSlot,
                    "row " + std::to_string(i) + " allows unpopulated slot " +
                        std::to_string(c));
      }
    }
  }
}

std::vector<std::size_t> allowed_columns(const AllowMask& allow, std::size_t row) {
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < allow.cols(); ++c) {
    if (allow.get(row, c)) cols.push_back(c);
  }
  return cols;
}

std::size_t require_size(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) {
    throw Error(ErrorCode::kParse, std::string("field '") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what); };
  if (vocab_size == 0 || d_model == 0 || n_layers == 0 || ffn_dim == 0) {
    fail("model dimensions must be positive");
  }
  if (n_heads == 0 || n_kv_heads == 0 || n_heads % n_kv_heads != 0) {
    fail("n_heads must be a positive multiple of n_kv_heads");
  }
  if (d_model != n_heads * head_dim) fail("d_model must equal n_heads * head_dim");
  if (head_dim == 0 || head_dim % 2 != 0) fail("head_dim must be even for rotary embedding");
  if (window && *window == 0) fail("window must be at least 1");
  if (!(rope_base > 0.0)) fail("rope_base must be positive");
}

ModelConfig mha_config(std::uint64_t seed) {
  ModelConfig c;
  c.seed = seed;
  return c;
}

ModelConfig gqa_config(std::uint64_t seed) {
  ModelConfig c = mha_config(seed);
  c.n_kv_heads = 2;
  return c;
}

ModelConfig swa_config(std::uint64_t seed, std::size_t window) {
  ModelConfig c = mha_config(seed);
  c.window = window;
  return c;
}

ModelConfig parse_model_config(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParse, std::string("model config: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kParse, "model config must be a JSON object");
  static const std::unordered_set<std::string> known = {
      "vocab_size", "d_model", "n_layers", "n_heads", "n_kv_heads",
      "head_dim",   "ffn_dim", "window",   "rope_base", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw Error(ErrorCode::kParse, "unknown model config field '" + key + "'");
  }
  ModelConfig c;
  try {
    c.vocab_size = require_size(j, "vocab_size");
    c.d_model = require_size(j, "d_model");
    c.n_layers = require_size(j, "n_layers");
    c.n_heads = require_size(j, "n_heads");
    c.n_kv_heads = require_size(j, "n_kv_heads");
    c.head_dim = require_size(j, "head_dim");
    c.ffn_dim = require_size(j, "ffn_dim");
    if (j.contains("window") && !j["window"].is_null()) c.window = require_size(j, "window");
    if (!j.at("rope_base").is_number()) throw Error(ErrorCode::kParse, "rope_base must be a number");
    c.rope_base = j["rope_base"].get<double>();
    if (!j.at("seed").is_number_unsigned()) throw Error(ErrorCode::kParse, "seed must be a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::out_of_range& e) {
    throw Error(ErrorCode::kParse, std::string("model config missing field: ") + e.what());
  }
  c.validate();
  return c;
}

std::string model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["n_kv_heads"] = c.n_kv_heads;
  j["head_dim"] = c.head_dim;
  j["ffn_dim"] = c.ffn_dim;
  j["window"] = c.window ? nlohmann::ordered_json(*c.window) : nlohmann::ordered_json(nullptr);
  j["rope_base"] = c.rope_base;
  j["seed"] = c.seed;
  return j.dump();
}

std::string model_config_digest(const ModelConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : model_config_to_json(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

WeightBundle init_weights(const ModelConfig& config, bool tied_output) {
  config.validate();
  const std::uint64_t seed = config.seed;
  const std::size_t d = config.d_model;
  const std::size_t qd = config.n_heads * config.head_dim;
  const std::size_t kvd = config.n_kv_heads * config.head_dim;

  WeightBundle w;
  w.config = config;
  w.tied_output = tied_output;
  std::uint64_t stream = 0;
  w.embedding = random_matrix(seed, stream++, config.vocab_size, d, d);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights lw;
    lw.attn_gain.assign(d, 1.0);
    lw.wq = random_matrix(seed, stream++, d, qd, d);
    lw.wk = random_matrix(seed, stream++, d, kvd, d);
    lw.wv = random_matrix(seed, stream++, d, kvd, d);
    lw.wo = random_matrix(seed, stream++, qd, d, qd);
    lw.ffn_gain.assign(d, 1.0);
    lw.w_up = random_matrix(seed, stream++, d, config.ffn_dim, d);
    lw.w_down = random_matrix(seed, stream++, config.ffn_dim, d, config.ffn_dim);
    w.layers.push_back(std::move(lw));
  }
  w.final_gain.assign(d, 1.0);
  if (!tied_output) w.output = random_matrix(seed, stream++, d, config.vocab_size, d);
  return w;
}

std::vector<double> attention_scores(std::span<const double> q, const Matrix& keys,
                                     const AllowRow& allow) {
  if (q.size() != keys.cols) {
    throw Error(ErrorCode::kDimensionMismatch, "query length differs from key width");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size()));
  std::vector<double> scores(keys.rows);
  for (std::size_t j = 0; j < keys.rows; ++j) scores[j] = dot(q, keys.row(j)) * scale;
  return softmax_masked(scores, allow);
}

Transformer::Transformer(WeightBundle weights) : weights_(std::move(weights)) {
  weights_.config.validate();
}

CacheShape Transformer::cache_shape() const {
  return {weights_.config.n_layers, weights_.config.n_kv_heads, weights_.config.head_dim};
}

Matrix Transformer::forward_step(KVCacheArena& cache, const StepInput& input) const {
  return triebeam::forward_step(weights_, cache, input);
}

Matrix forward_step(const WeightBundle& weights, KVCacheArena& cache, const StepInput& input) {
  const ModelConfig& cfg = weights.config;
  if (cache.shape() != CacheShape{cfg.n_layers, cfg.n_kv_heads, cfg.head_dim}) {
    throw Error(ErrorCode::kDimensionMismatch, "arena shape does not match model");
  }
  validate_step_input(cache, input);
  std::vector<std::vector<std::size_t>> visible(input.token_ids.size());
  for (std::size_t i = 0; i < visible.size(); ++i) visible[i] = allowed_columns(input.allow, i);

  auto store = [&](std::size_t i, std::size_t layer, std::span<const double> k,
                   std::span<const double> v) { cache.write(layer, input.slot_ids[i], k, v); };
  auto context = [&](std::size_t i, std::size_t layer) {
    std::vector<KVRef> refs;
    refs.reserve(visible[i].size());
    for (std::size_t slot : visible[i]) {
      refs.push_back({cache.key(layer, slot), cache.value(layer, slot)});
    }
    return refs;
  };
  return run_layers(weights, input.token_ids, input.positions, store, context);
}

Matrix Transformer::forward_batch(BatchKVCache& cache, std::span<const TokenId> tokens,
                                  std::size_t position) const {
  if (tokens.size() != cache.beam_count()) {
    throw Error(ErrorCode::kDimensionMismatch, "one token per beam expected");
  }
  for (std::size_t b = 0; b < cache.beam_count(); ++b) {
    if (cache.length(b) != position) {
      throw Error(ErrorCode::kInvariantBreach, "beam length differs from decode position");
    }
  }
  const std::vector<std::size_t> positions(tokens.size(), position);
  const std::size_t first =
      weights_.config.window && position + 1 > *weights_.config.window
          ? position + 1 - *weights_.config.window
          : 0;
  auto store = [&](std::size_t i, std::size_t layer, std::span<const double> k,
                   std::span<const double> v) { cache.append(i, layer, k, v); };
  auto context = [&](std::size_t i, std::size_t layer) {
    std::vector<KVRef> refs;
    refs.reserve(position + 1 - first);
    for (std::size_t p = first; p <= position; ++p) {
      refs.push_back({cache.key(i, layer, p), cache.value(i, layer, p)});
    }
    return refs;
  };
  return run_layers(weights_, tokens, positions, store, context);
}

HistoryModel::HistoryModel(std::size_t vocab_size, Scorer scorer)
    : vocab_size_(vocab_size), scorer_(std::move(scorer)) {
  if (vocab_size_ == 0) throw Error(ErrorCode::kInvalidConfig, "vocab must be non-empty");
}

std::vector<double> HistoryModel::score(std::span<const TokenId> history) const {
  auto row = scorer_(history);
  if (row.size() != vocab_size_) {
    throw Error(ErrorCode::kDimensionMismatch, "history scorer returned wrong vocab size");
  }
  return row;
}

Matrix HistoryModel::forward_step(KVCacheArena& cache, const StepInput& input) const {
  if (cache.shape() != cache_shape()) {
    throw Error(ErrorCode::kDimensionMismatch, "arena shape does not match history model");
  }
  validate_step_input(cache, input);
  const std::size_t n = input.token_ids.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double entry[2] = {static_cast<double>(input.token_ids[i]),
                             static_cast<double>(input.positions[i])};
    cache.write(0, input.slot_ids[i], entry, entry);
  }
  Matrix out(n, vocab_size_);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<std::size_t, TokenId>> seen;
    for (std::size_t slot : allowed_columns(input.allow, i)) {
      auto k = cache.key(0, slot);
      seen.emplace_back(static_cast<std::size_t>(k[1]), static_cast<TokenId>(k[0]));
    }
    std::sort(seen.begin(), seen.end());
    // The attended set must be exactly one causal chain ending at this query.
    bool chain = seen.size() == input.positions[i] + 1;
    for (std::size_t p = 0; chain && p < seen.size(); ++p) chain = seen[p].first == p;
    if (!chain || seen.back().second != input.token_ids[i]) {
      throw Error(ErrorCode::kInvariantBreach,
                  "attended slots of row " + std::to_string(i) + " do not form a causal chain");
    }
    std::vector<TokenId> history;
    history.reserve(seen.size());
    for (const auto& [pos, tok] : seen) history.push_back(tok);
    const auto row = score(history);
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

Matrix HistoryModel::forward_batch(BatchKVCache& cache, std::span<const TokenId> tokens,
                                   std::size_t position) const {
  if (tokens.size() != cache.beam_count()) {
    throw Error(ErrorCode::kDimensionMismatch, "one token per beam expected");
  }
  Matrix out(tokens.size(), vocab_size_);
  for (std::size_t b = 0; b < tokens.size(); ++b) {
    if (cache.length(b) != position) {
      throw Error(ErrorCode::kInvariantBreach, "beam length differs from decode position");
    }
    const double entry[2] = {static_cast<double>(tokens[b]), static_cast<double>(position)};
    cache.append(b, 0, entry, entry);
    std::vector<TokenId> history;
    for (std::size_t p = 0; p <= position; ++p) {
      history.push_back(static_cast<TokenId>(cache.key(b, 0, p)[0]));
    }
    const auto row = score(history);
    std::copy(row.begin(), row.end(), out.row(b).begin());
  }
  return out;
}

}  // namespace triebeam
