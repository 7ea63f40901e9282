// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "triebeam/kvcache.hpp"
#include "triebeam/numkernel.hpp"

namespace triebeam {

using TokenId = std::int32_t;

struct ModelConfig {
  std::size_t vocab_size = 64;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t n_kv_heads = 4;
  std::size_t head_dim = 16;
  std::size_t ffn_dim = 128;
  std::optional<std::size_t> window;  // sliding-window size in tokens
  double rope_base = 10000.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Toy presets: vocab 64, d_model 64, 2 layers, 4 heads of 16.
ModelConfig mha_config(std::uint64_t seed);
ModelConfig gqa_config(std::uint64_t seed);  // 2 KV heads
ModelConfig swa_config(std::uint64_t seed, std::size_t window = 8);

// Parses a JSON object carrying exactly the ModelConfig field names.
// Unknown fields are rejected.
ModelConfig parse_model_config(const std::string& json_text);
std::string model_config_to_json(const ModelConfig& config);
// Stable 64-bit digest (FNV-1a over the canonical JSON), rendered as hex.
std::string model_config_digest(const ModelConfig& config);

struct LayerWeights {
  std::vector<double> attn_gain;  // d_model
  Matrix wq;                      // d_model x n_heads*head_dim
  Matrix wk;                      // d_model x n_kv_heads*head_dim
  Matrix wv;                      // d_model x n_kv_heads*head_dim
  Matrix wo;                      // n_heads*head_dim x d_model
  std::vector<double> ffn_gain;   // d_model
  Matrix w_up;                    // d_model x ffn_dim
  Matrix w_down;                  // ffn_dim x d_model

  bool operator==(const LayerWeights&) const = default;
};

struct WeightBundle {
  ModelConfig config;
  Matrix embedding;  // vocab x d_model
  std::vector<LayerWeights> layers;
  std::vector<double> final_gain;
  Matrix output;  // d_model x vocab; unused when tied_output
  bool tied_output = false;

  bool operator==(const WeightBundle&) const = default;
};

// Weights are uniform(-s, s) with s = 1/sqrt(fan_in), drawn from a
// counter-based splitmix64 stream keyed by (seed, tensor index, element).
// Norm gains are 1.
WeightBundle init_weights(const ModelConfig& config, bool tied_output = false);

struct StepInput {
  std::vector<TokenId> token_ids;
  std::vector<std::size_t> positions;
  std::vector<std::size_t> slot_ids;
  AllowMask allow;  // one row per query token, columns are arena slots
};

// softmax(q . K^T / sqrt(head_dim)) under `allow`.
std::vector<double> attention_scores(std::span<const double> q, const Matrix& keys,
                                     const AllowRow& allow);

// Anything that can score decode steps against both cache layouts. The two
// decoders only talk to models through this interface.
class StepModel {
 public:
  virtual ~StepModel() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual CacheShape cache_shape() const = 0;
  // Sliding window applied by forward_batch; the trie path encodes it in the mask.
  virtual std::optional<std::size_t> window() const = 0;

  // Writes K/V for each query row into its slot, then attends over the allowed
  // slots. Returns one log-probability row per query.
  virtual Matrix forward_step(KVCacheArena& cache, const StepInput& input) const = 0;

  // Appends tokens[i] at `position` to beam i and returns its log-prob row.
  // tokens.size() must equal the cache's beam count.
  virtual Matrix forward_batch(BatchKVCache& cache, std::span<const TokenId> tokens,
                               std::size_t position) const = 0;
};

class Transformer final : public StepModel {
 public:
  explicit Transformer(WeightBundle weights);

  const WeightBundle& weights() const noexcept { return weights_; }
  const ModelConfig& config() const noexcept { return weights_.config; }

  std::size_t vocab_size() const override { return weights_.config.vocab_size; }
  CacheShape cache_shape() const override;
  std::optional<std::size_t> window() const override { return weights_.config.window; }

  Matrix forward_step(KVCacheArena& cache, const StepInput& input) const override;
  Matrix forward_batch(BatchKVCache& cache, std::span<const TokenId> tokens,
                       std::size_t position) const override;

 private:
  WeightBundle weights_;
};

// Free-function form of Transformer::forward_step.
Matrix forward_step(const WeightBundle& weights, KVCacheArena& cache, const StepInput& input);

// Synthetic model whose next-token log-probabilities are an arbitrary function
// of the full token history. The cache stores (token, position) pairs, and the
// history seen by the function is recovered from the attended slots only, so a
// wrong mask produces a wrong (or rejected) history.
class HistoryModel final : public StepModel {
 public:
  using Scorer = std::function<std::vector<double>(std::span<const TokenId> history)>;

  HistoryModel(std::size_t vocab_size, Scorer scorer);

  std::size_t vocab_size() const override { return vocab_size_; }
  CacheShape cache_shape() const override { return {1, 1, 2}; }
  std::optional<std::size_t> window() const override { return std::nullopt; }

  Matrix forward_step(KVCacheArena& cache, const StepInput& input) const override;
  Matrix forward_batch(BatchKVCache& cache, std::span<const TokenId> tokens,
                       std::size_t position) const override;

 private:
  std::vector<double> score(std::span<const TokenId> history) const;

  std::size_t vocab_size_;
  Scorer scorer_;
};

}  // namespace triebeam
