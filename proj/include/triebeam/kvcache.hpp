// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <vector>

namespace triebeam {

// Geometry of one cached key (or value) entry.
struct CacheShape {
  std::size_t n_layers = 0;
  std::size_t n_kv_heads = 0;
  std::size_t head_dim = 0;

  std::size_t entry_width() const noexcept { return n_kv_heads * head_dim; }
  bool operator==(const CacheShape&) const = default;
};

// Slot-addressed key/value storage shared by every branch of a trie decode.
// Slot indices stay stable until compact() renumbers them.
class KVCacheArena {
 public:
  static constexpr std::size_t kMaxCapacity = std::size_t{1} << 24;

  explicit KVCacheArena(CacheShape shape, std::size_t initial_capacity = 16);

  const CacheShape& shape() const noexcept { return shape_; }
  std::size_t capacity() const noexcept { return capacity_; }
  // Number of occupied slots.
  std::size_t len() const noexcept { return len_; }
  // One past the highest slot index ever occupied since the last compaction.
  std::size_t extent() const noexcept { return extent_; }

  bool occupied(std::size_t slot) const;
  bool occupied(std::size_t layer, std::size_t slot) const;

  void write(std::size_t layer, std::size_t slot, std::span<const double> k,
             std::span<const double> v);
  std::span<const double> key(std::size_t layer, std::size_t slot) const;
  std::span<const double> value(std::size_t layer, std::size_t slot) const;

  // Gathers `retained[i]` into slot i for every layer. Returns the old slot
  // for each new index, i.e. the remapping old -> new is retained[i] -> i.
  std::vector<std::size_t> compact(std::span<const std::size_t> retained);

  // Debug aid: when enabled every key()/value() call records its slot.
  void set_read_tracking(bool enabled);
  const std::set<std::size_t>& slots_read() const noexcept { return reads_; }

 private:
  void check_slot(std::size_t layer, std::size_t slot) const;
  void grow_to(std::size_t min_capacity);
  std::size_t offset(std::size_t slot) const { return slot * shape_.entry_width(); }

  CacheShape shape_;
  std::size_t capacity_ = 0;
  std::size_t len_ = 0;
  std::size_t extent_ = 0;
  std::vector<std::vector<double>> keys_;    // per layer
  std::vector<std::vector<double>> values_;  // per layer
  std::vector<std::vector<unsigned char>> written_;  // per layer, per slot
  std::vector<std::size_t> layers_written_;          // per slot
  bool track_reads_ = false;
  mutable std::set<std::size_t> reads_;
};

// Per-beam contiguous caches used by the conventional batch baseline. Every
// beam owns a full copy of its context, prompt included.
class BatchKVCache {
 public:
  BatchKVCache(CacheShape shape, std::size_t beams);

  const CacheShape& shape() const noexcept { return shape_; }
  std::size_t beam_count() const noexcept { return beams_.size(); }
  std::size_t length(std::size_t beam) const;

  void append(std::size_t beam, std::size_t layer, std::span<const double> k,
              std::span<const double> v);
  std::span<const double> key(std::size_t beam, std::size_t layer, std::size_t pos) const;
  std::span<const double> value(std::size_t beam, std::size_t layer, std::size_t pos) const;

  // Beam i becomes a copy of former beam parents[i]. The beam count becomes
  // parents.size().
  void reorder_beams(std::span<const std::size_t> parents);

 private:
  struct Beam {
    std::vector<std::vector<double>> keys;    // per layer, len * width
    std::vector<std::vector<double>> values;  // per layer
  };
  const Beam& beam_at(std::size_t beam) const;

  CacheShape shape_;
  std::vector<Beam> beams_;
};

std::size_t entry_count(const KVCacheArena& arena);
std::size_t entry_count(const BatchKVCache& cache);

}  // namespace triebeam
