// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "triebeam/error.hpp"
#include "triebeam/model.hpp"

using namespace triebeam;

namespace {

ModelConfig small_config(std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 4;
  c.n_kv_heads = 4;
  c.head_dim = 4;
  c.ffn_dim = 24;
  c.seed = seed;
  return c;
}

// Feeds `tokens` one at a time through forward_step with a causal chain mask.
Matrix incremental(const WeightBundle& w, const std::vector<TokenId>& tokens) {
  const CacheShape shape{w.config.n_layers, w.config.n_kv_heads, w.config.head_dim};
  KVCacheArena arena(shape);
  Matrix out(tokens.size(), w.config.vocab_size);
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    AllowMask allow(1, p + 1);
    for (std::size_t c = 0; c <= p; ++c) allow.set(0, c, true);
    const Matrix row = forward_step(w, arena, {{tokens[p]}, {p}, {p}, allow});
    std::copy(row.data.begin(), row.data.end(), out.row(p).begin());
  }
  return out;
}

std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng() % vocab);
  return t;
}

void for_each_weight(const WeightBundle& w, const std::function<void(double)>& f) {
  for (double x : w.embedding.data) f(x);
  for (const auto& l : w.layers) {
    for (const Matrix* m : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w_up, &l.w_down}) {
      for (double x : m->data) f(x);
    }
  }
  for (double x : w.output.data) f(x);
}

}  // namespace

TEST_CASE("init_weights is deterministic and seed sensitive") {
  const auto a = init_weights(mha_config(9));
  const auto b = init_weights(mha_config(9));
  CHECK(a == b);
  const auto c = init_weights(mha_config(10));
  CHECK_FALSE(a.embedding == c.embedding);
}

TEST_CASE("init_weights respects the fan-in bound") {
  ModelConfig c;
  c.vocab_size = 8;
  c.d_model = 4;
  c.n_heads = 2;
  c.n_kv_heads = 1;
  c.head_dim = 2;
  c.ffn_dim = 4;
  c.n_layers = 3;
  const auto w = init_weights(c);
  std::size_t count = 0;
  for_each_weight(w, [&](double x) {
    ++count;
    CHECK(x >= -0.5);
    CHECK(x <= 0.5);
  });
  CHECK(count > 100);
}

TEST_CASE("weight shapes follow the config") {
  const auto w = init_weights(gqa_config(1));
  CHECK(w.layers.size() == 2);
  CHECK(w.layers[0].wk.cols == 2 * 16);
  CHECK(w.layers[0].wq.cols == 4 * 16);
  CHECK(w.output.rows == 64);
  CHECK(w.output.cols == 64);
  const auto tied = init_weights(mha_config(1), true);
  CHECK(tied.output.data.empty());
}

TEST_CASE("config validation") {
  ModelConfig c = mha_config(0);
  c.n_kv_heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = mha_config(0);
  c.d_model = 60;
  CHECK_THROWS_AS(c.validate(), Error);
  c = mha_config(0);
  c.window = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("model config JSON round trip and strict parsing") {
  const ModelConfig c = swa_config(42, 5);
  CHECK(parse_model_config(model_config_to_json(c)) == c);
  CHECK(model_config_digest(c) == model_config_digest(swa_config(42, 5)));
  CHECK(model_config_digest(c) != model_config_digest(swa_config(43, 5)));

  auto j = nlohmann::json::parse(model_config_to_json(mha_config(1)));
  j["extra"] = 1;
  try {
    parse_model_config(j.dump());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParse);
  }
  j = nlohmann::json::parse(model_config_to_json(mha_config(1)));
  j.erase("head_dim");
  CHECK_THROWS_AS(parse_model_config(j.dump()), Error);
  CHECK_THROWS_AS(parse_model_config("{"), Error);
}

TEST_CASE("single token forward equals the no-cache oracle") {
  const auto w = init_weights(small_config(2));
  KVCacheArena arena({2, 4, 4});
  AllowMask allow(1, 1);
  allow.set(0, 0, true);
  const Matrix got = forward_step(w, arena, {{5}, {0}, {0}, allow});
  const Matrix ref = oracle::full_forward(w, {5});
  CHECK(oracle::max_abs_diff(got, ref) <= 1e-12);
  CHECK(arena.len() == 1);
}

TEST_CASE("incremental decoding matches full-sequence forward") {
  std::mt19937_64 rng(17);
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    for (bool gqa : {false, true}) {
      ModelConfig c = small_config(seed);
      if (gqa) c.n_kv_heads = 2;
      const auto w = init_weights(c, seed % 2 == 0);
      const auto tokens = random_tokens(rng, 6, c.vocab_size);
      CHECK(oracle::max_abs_diff(incremental(w, tokens), oracle::full_forward(w, tokens)) <= 1e-9);
    }
  }
}

TEST_CASE("multi-row prefill equals token-by-token decoding") {
  const auto w = init_weights(small_config(4));
  const std::vector<TokenId> tokens = {3, 1, 4, 1, 5, 9, 2};
  KVCacheArena arena({2, 4, 4});
  const std::size_t n = tokens.size();
  AllowMask causal(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) causal.set(i, j, true);
  }
  std::vector<std::size_t> pos(n);
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  const Matrix batch = forward_step(w, arena, {tokens, pos, pos, causal});
  CHECK(batch == incremental(w, tokens));
}

TEST_CASE("GQA with one query head per KV head equals MHA") {
  ModelConfig mha = small_config(8);
  const auto w = init_weights(mha);
  ModelConfig gqa = mha;
  gqa.n_kv_heads = gqa.n_heads;
  CHECK(init_weights(gqa) == w);
  const std::vector<TokenId> tokens = {1, 2, 3, 4};
  CHECK(incremental(init_weights(gqa), tokens) == incremental(w, tokens));
}

TEST_CASE("single KV head matches an explicitly broadcast MHA") {
  ModelConfig shared = small_config(12);
  shared.n_kv_heads = 1;
  const auto w = init_weights(shared);
  // Broadcast the single K/V projection to every head of an MHA model.
  WeightBundle mha = w;
  mha.config.n_kv_heads = mha.config.n_heads;
  for (auto& l : mha.layers) {
    for (Matrix* m : {&l.wk, &l.wv}) {
      Matrix wide(m->rows, m->cols * mha.config.n_heads);
      for (std::size_t r = 0; r < m->rows; ++r) {
        for (std::size_t h = 0; h < mha.config.n_heads; ++h) {
          for (std::size_t c = 0; c < m->cols; ++c) wide.at(r, h * m->cols + c) = m->at(r, c);
        }
      }
      *m = wide;
    }
  }
  const std::vector<TokenId> tokens = {7, 0, 3, 3, 9};
  CHECK(oracle::max_abs_diff(incremental(w, tokens), incremental(mha, tokens)) <= 1e-12);
}

TEST_CASE("extra blocked columns do not change logits") {
  const auto w = init_weights(small_config(3));
  const std::vector<TokenId> prefix = {2, 7, 1};
  // Arena A holds the prefix; arena B also holds an unrelated entry in slot 3.
  KVCacheArena a({2, 4, 4}), b({2, 4, 4});
  for (std::size_t p = 0; p < prefix.size(); ++p) {
    AllowMask allow(1, p + 1);
    for (std::size_t c = 0; c <= p; ++c) allow.set(0, c, true);
    forward_step(w, a, {{prefix[p]}, {p}, {p}, allow});
    forward_step(w, b, {{prefix[p]}, {p}, {p}, allow});
  }
  AllowMask other(1, 4);
  other.set(0, 0, true);
  other.set(0, 3, true);
  forward_step(w, b, {{11}, {1}, {3}, other});

  AllowMask narrow(1, 4);
  AllowMask wide(1, 5);
  for (std::size_t c : {0, 1, 2}) {
    narrow.set(0, c, true);
    wide.set(0, c, true);
  }
  narrow.set(0, 3, true);
  wide.set(0, 4, true);
  const Matrix x = forward_step(w, a, {{6}, {3}, {3}, narrow});
  const Matrix y = forward_step(w, b, {{6}, {3}, {4}, wide});
  CHECK(x == y);
}

TEST_CASE("forward_step only touches allowed and written slots") {
  const auto w = init_weights(small_config(6));
  KVCacheArena arena({2, 4, 4});
  AllowMask first(3, 3);
  for (std::size_t i = 0; i < 3; ++i) first.set(i, i, true);
  forward_step(w, arena, {{1, 2, 3}, {0, 0, 0}, {0, 1, 2}, first});
  arena.set_read_tracking(true);
  AllowMask allow(1, 4);
  allow.set(0, 1, true);
  allow.set(0, 3, true);
  forward_step(w, arena, {{4}, {1}, {3}, allow});
  CHECK(arena.slots_read() == std::set<std::size_t>{1, 3});
  CHECK(arena.len() == 4);
}

TEST_CASE("forward_step rejects bad step inputs") {
  const auto w = init_weights(small_config(1));
  KVCacheArena arena({2, 4, 4});
  AllowMask one(1, 1);
  one.set(0, 0, true);
  forward_step(w, arena, {{1}, {0}, {0}, one});
  try {
    forward_step(w, arena, {{2}, {1}, {0}, one});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSlotCollision);
  }
  AllowMask reach(1, 3);
  reach.set(0, 2, true);
  reach.set(0, 1, true);
  try {
    forward_step(w, arena, {{2}, {1}, {1}, reach});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUnpopulatedSlot);
  }
  CHECK(arena.len() == 1);
}

TEST_CASE("attention_scores examples") {
  const double q1[] = {1.0, 2.0};
  Matrix one(1, 2, std::vector<double>{0.5, -0.5});
  CHECK(attention_scores(q1, one, {true}) == std::vector<double>{1.0});

  const double q2[] = {0.0, 1.0};
  Matrix flat(4, 2, std::vector<double>{1, 0, 2, 0, -1, 0, 3, 0});
  for (double p : attention_scores(q2, flat, {true, true, true, true})) {
    CHECK(p == doctest::Approx(0.25));
  }

  // Scores 0 and ln 3 after the 1/sqrt(2) scaling.
  const double s = std::log(3.0) * std::sqrt(2.0);
  const double q3[] = {1.0, 0.0};
  Matrix keys(2, 2, std::vector<double>{0, 1, s, 0});
  const auto p = attention_scores(q3, keys, {true, true});
  CHECK(std::abs(p[0] - 0.25) < 1e-12);
  CHECK(std::abs(p[1] - 0.75) < 1e-12);
}

TEST_CASE("history model verifies the attended chain") {
  HistoryModel m(4, [](std::span<const TokenId> h) {
    std::vector<double> lp(4, std::log(0.25));
    lp[0] = static_cast<double>(h.size());
    return lp;
  });
  KVCacheArena arena(m.cache_shape());
  AllowMask chain(2, 2);
  chain.set(0, 0, true);
  chain.set(1, 0, true);
  chain.set(1, 1, true);
  const Matrix out = m.forward_step(arena, {{1, 2}, {0, 1}, {0, 1}, chain});
  CHECK(out.at(1, 0) == 2.0);

  AllowMask skip(1, 3);
  skip.set(0, 2, true);
  skip.set(0, 0, true);
  CHECK_THROWS_AS(m.forward_step(arena, {{3}, {2}, {2}, skip}), Error);
}
