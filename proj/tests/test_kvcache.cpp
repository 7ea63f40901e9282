// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "triebeam/error.hpp"
#include "triebeam/kvcache.hpp"

using namespace triebeam;

namespace {

std::vector<double> entry(double base) { return {base, base + 0.5, base + 1.0, base + 1.5}; }

void fill(KVCacheArena& arena, std::size_t n) {
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t l = 0; l < arena.shape().n_layers; ++l) {
      arena.write(l, s, entry(10.0 * s + l), entry(-10.0 * s - l));
    }
  }
}

}  // namespace

TEST_CASE("arena write and read round trip") {
  KVCacheArena arena({2, 2, 2}, 2);
  CHECK(entry_count(arena) == 0);
  fill(arena, 5);
  CHECK(arena.len() == 5);
  CHECK(arena.capacity() >= 5);
  const auto k = arena.key(1, 3);
  CHECK(std::vector<double>(k.begin(), k.end()) == entry(31.0));
  const auto v = arena.value(0, 4);
  CHECK(std::vector<double>(v.begin(), v.end()) == entry(-40.0));
}

TEST_CASE("arena counts a slot once across layers") {
  KVCacheArena arena({3, 1, 4});
  arena.write(0, 0, entry(1), entry(1));
  CHECK(arena.len() == 1);
  arena.write(2, 0, entry(1), entry(1));
  CHECK(arena.len() == 1);
  CHECK(arena.occupied(0));
}

TEST_CASE("arena rejects double writes and unoccupied reads") {
  KVCacheArena arena({1, 2, 2});
  arena.write(0, 0, entry(0), entry(0));
  try {
    arena.write(0, 0, entry(1), entry(1));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDoubleWrite);
  }
  try {
    (void)arena.key(0, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUnoccupiedSlot);
  }
  CHECK_THROWS_AS(arena.write(0, 1, std::vector<double>{1.0}, entry(0)), Error);
  CHECK_THROWS_AS(arena.write(0, KVCacheArena::kMaxCapacity, entry(0), entry(0)), Error);
}

TEST_CASE("compact gathers retained slots") {
  KVCacheArena arena({2, 2, 2});
  fill(arena, 5);
  const std::size_t retained[] = {0, 1, 2, 4};
  const auto old = arena.compact(retained);
  CHECK(old == std::vector<std::size_t>{0, 1, 2, 4});
  CHECK(arena.len() == 4);
  CHECK_FALSE(arena.occupied(4));
  const auto k = arena.key(1, 3);
  CHECK(std::vector<double>(k.begin(), k.end()) == entry(41.0));
  const auto v = arena.value(0, 2);
  CHECK(std::vector<double>(v.begin(), v.end()) == entry(-20.0));
}

TEST_CASE("compact with all slots is the identity") {
  KVCacheArena a({1, 2, 2}), b({1, 2, 2});
  fill(a, 4);
  fill(b, 4);
  const std::size_t all[] = {0, 1, 2, 3};
  CHECK(a.compact(all) == std::vector<std::size_t>{0, 1, 2, 3});
  for (std::size_t s = 0; s < 4; ++s) {
    const auto x = a.key(0, s), y = b.key(0, s);
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }
}

TEST_CASE("compact rejects unoccupied or unordered slots") {
  KVCacheArena arena({1, 2, 2});
  fill(arena, 3);
  const std::size_t missing[] = {0, 5};
  CHECK_THROWS_AS(arena.compact(missing), Error);
  const std::size_t unordered[] = {2, 1};
  CHECK_THROWS_AS(arena.compact(unordered), Error);
  CHECK(arena.len() == 3);
}

TEST_CASE("nested compaction equals one compaction of the composition") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 20;
    KVCacheArena twice({2, 1, 4}), once({2, 1, 4});
    fill(twice, n);
    fill(once, n);
    std::vector<std::size_t> first;
    for (std::size_t s = 0; s < n; ++s) {
      if (rng() % 3) first.push_back(s);
    }
    std::vector<std::size_t> second, composed;
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (rng() % 3) {
        second.push_back(i);
        composed.push_back(first[i]);
      }
    }
    twice.compact(first);
    twice.compact(second);
    once.compact(composed);
    REQUIRE(twice.len() == once.len());
    for (std::size_t s = 0; s < once.len(); ++s) {
      for (std::size_t l = 0; l < 2; ++l) {
        const auto x = twice.key(l, s), y = once.key(l, s);
        CHECK(std::equal(x.begin(), x.end(), y.begin()));
        const auto u = twice.value(l, s), v = once.value(l, s);
        CHECK(std::equal(u.begin(), u.end(), v.begin()));
      }
    }
  }
}

TEST_CASE("arena writes after compaction reuse freed slots") {
  KVCacheArena arena({1, 2, 2}, 2);
  fill(arena, 6);
  const std::size_t keep[] = {1, 5};
  arena.compact(keep);
  arena.write(0, 2, entry(7), entry(7));
  CHECK(arena.len() == 3);
  CHECK(arena.extent() == 3);
}

TEST_CASE("batch cache reorder semantics") {
  BatchKVCache cache({1, 1, 2}, 3);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t p = 0; p < 7; ++p) {
      const double e[2] = {static_cast<double>(b), static_cast<double>(p)};
      cache.append(b, 0, e, e);
    }
  }
  CHECK(entry_count(cache) == 21);

  const std::size_t identity[] = {0, 1, 2};
  cache.reorder_beams(identity);
  CHECK(cache.key(2, 0, 6)[0] == 2.0);

  const std::size_t crossing[] = {2, 0, 0};
  cache.reorder_beams(crossing);
  CHECK(cache.key(0, 0, 3)[0] == 2.0);
  CHECK(cache.key(1, 0, 3)[0] == 0.0);
  CHECK(cache.key(2, 0, 3)[0] == 0.0);

  const std::size_t bad[] = {0, 3, 1};
  try {
    cache.reorder_beams(bad);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIndexOutOfRange);
  }
}

TEST_CASE("broadcast reorder replicates one beam") {
  BatchKVCache cache({1, 1, 2}, 1);
  for (std::size_t p = 0; p < 5; ++p) {
    const double e[2] = {1.0, static_cast<double>(p)};
    cache.append(0, 0, e, e);
  }
  CHECK(entry_count(cache) == 5);
  const std::size_t parents[] = {0, 0, 0};
  cache.reorder_beams(parents);
  CHECK(cache.beam_count() == 3);
  CHECK(entry_count(cache) == 15);
  for (std::size_t b = 0; b < 3; ++b) CHECK(cache.length(b) == 5);
}

TEST_CASE("crossing reorders reproduce per-beam recomputation") {
  ModelConfig c;
  c.vocab_size = 12;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_kv_heads = 2;
  c.head_dim = 4;
  c.ffn_dim = 8;
  c.seed = 21;
  const Transformer model(init_weights(c));
  BatchKVCache cache(model.cache_shape(), 1);
  std::vector<std::vector<TokenId>> seqs = {{3, 4}};
  for (std::size_t p = 0; p < 2; ++p) {
    const TokenId t = seqs[0][p];
    model.forward_batch(cache, std::span<const TokenId>(&t, 1), p);
  }
  const std::vector<std::vector<std::size_t>> parent_steps = {{0, 0, 0}, {2, 0, 1}, {1, 1, 2}};
  const std::vector<std::vector<TokenId>> token_steps = {{1, 2, 3}, {5, 6, 7}, {8, 9, 10}};
  Matrix last;
  for (std::size_t s = 0; s < parent_steps.size(); ++s) {
    std::vector<std::vector<TokenId>> next;
    for (std::size_t i = 0; i < 3; ++i) {
      next.push_back(seqs[parent_steps[s][i]]);
      next.back().push_back(token_steps[s][i]);
    }
    seqs = next;
    cache.reorder_beams(parent_steps[s]);
    last = model.forward_batch(cache, token_steps[s], 2 + s);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const Matrix ref = oracle::full_forward(model.weights(), seqs[i]);
    for (std::size_t v = 0; v < c.vocab_size; ++v) {
      CHECK(std::abs(last.at(i, v) - ref.at(ref.rows - 1, v)) <= 1e-9);
    }
  }
}
