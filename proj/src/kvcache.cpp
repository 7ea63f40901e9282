// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#include "triebeam/kvcache.hpp"

#include <algorithm>
#include <string>

#include "triebeam/error.hpp"

namespace triebeam {

KVCacheArena::KVCacheArena(CacheShape shape, std::size_t initial_capacity)
    : shape_(shape),
      keys_(shape.n_layers),
      values_(shape.n_layers),
      written_(shape.n_layers) {
  if (shape_.n_layers == 0 || shape_.entry_width() == 0) {
    throw Error(ErrorCode::kInvalidConfig, "arena needs at least one layer and head");
  }
  grow_to(std::max<std::size_t>(initial_capacity, 1));
}

void KVCacheArena::grow_to(std::size_t min_capacity) {
  if (min_capacity > kMaxCapacity) {
    throw Error(ErrorCode::kCapacityExceeded,
                "slot " + std::to_string(min_capacity - 1) + " beyond arena address space");
  }
  std::size_t cap = std::max<std::size_t>(capacity_, 1);
  while (cap < min_capacity) cap *= 2;
  if (cap == capacity_) return;
  const std::size_t width = shape_.entry_width();
  for (std::size_t l = 0; l < shape_.n_layers; ++l) {
    keys_[l].resize(cap * width, 0.0);
    values_[l].resize(cap * width, 0.0);
    written_[l].resize(cap, 0);
  }
  layers_written_.resize(cap, 0);
  capacity_ = cap;
}

bool KVCacheArena::occupied(std::size_t slot) const {
  return slot < capacity_ && layers_written_[slot] > 0;
}

bool KVCacheArena::occupied(std::size_t layer, std::size_t slot) const {
  return layer < shape_.n_layers && slot < capacity_ && written_[layer][slot] != 0;
}

void KVCacheArena::check_slot(std::size_t layer, std::size_t slot) const {
  if (layer >= shape_.n_layers) {
    throw Error(ErrorCode::kIndexOutOfRange, "layer " + std::to_string(layer));
  }
  if (!occupied(layer, slot)) {
    throw Error(ErrorCode::kUnoccupiedSlot,
                "read of unoccupied slot " + std::to_string(slot) + " in layer " +
                    std::to_string(layer));
  }
}

void KVCacheArena::write(std::size_t layer, std::size_t slot, std::span<const double> k,
                         std::span<const double> v) {
  const std::size_t width = shape_.entry_width();
  if (layer >= shape_.n_layers) {
    throw Error(ErrorCode::kIndexOutOfRange, "layer " + std::to_string(layer));
  }
  if (k.size() != width || v.size() != width) {
    throw Error(ErrorCode::kDimensionMismatch, "kv entry width mismatch");
  }
  if (slot >= capacity_) grow_to(slot + 1);
  if (written_[layer][slot] != 0) {
    throw Error(ErrorCode::kDoubleWrite,
                "slot " + std::to_string(slot) + " already written in layer " +
                    std::to_string(layer));
  }
  std::copy(k.begin(), k.end(), keys_[layer].begin() + static_cast<std::ptrdiff_t>(offset(slot)));
  std::copy(v.begin(), v.end(),
            values_[layer].begin() + static_cast<std::ptrdiff_t>(offset(slot)));
  written_[layer][slot] = 1;
  if (layers_written_[slot]++ == 0) ++len_;
  extent_ = std::max(extent_, slot + 1);
}

std::span<const double> KVCacheArena::key(std::size_t layer, std::size_t slot) const {
  check_slot(layer, slot);
  if (track_reads_) reads_.insert(slot);
  return {keys_[layer].data() + offset(slot), shape_.entry_width()};
}

std::span<const double> KVCacheArena::value(std::size_t layer, std::size_t slot) const {
  check_slot(layer, slot);
  if (track_reads_) reads_.insert(slot);
  return {values_[layer].data() + offset(slot), shape_.entry_width()};
}

std::vector<std::size_t> KVCacheArena::compact(std::span<const std::size_t> retained) {
  for (std::size_t i = 0; i < retained.size(); ++i) {
    if (!occupied(retained[i])) {
      throw Error(ErrorCode::kUnoccupiedSlot,
                  "compaction retains unoccupied slot " + std::to_string(retained[i]));
    }
    if (i > 0 && retained[i] <= retained[i - 1]) {
      throw Error(ErrorCode::kInvariantBreach, "compaction slots must be strictly ascending");
    }
  }
  const std::size_t width = shape_.entry_width();
  // Ascending order guarantees retained[i] >= i, so an in-place forward
  // gather never overwrites a source it still needs.
  for (std::size_t l = 0; l < shape_.n_layers; ++l) {
    for (std::size_t i = 0; i < retained.size(); ++i) {
      const std::size_t src = retained[i];
      if (src == i) continue;
      std::copy_n(keys_[l].begin() + static_cast<std::ptrdiff_t>(offset(src)), width,
                  keys_[l].begin() + static_cast<std::ptrdiff_t>(offset(i)));
      std::copy_n(values_[l].begin() + static_cast<std::ptrdiff_t>(offset(src)), width,
                  values_[l].begin() + static_cast<std::ptrdiff_t>(offset(i)));
      written_[l][i] = written_[l][src];
    }
    std::fill(written_[l].begin() + static_cast<std::ptrdiff_t>(retained.size()),
              written_[l].end(), 0);
  }
  for (std::size_t i = 0; i < retained.size(); ++i) {
    layers_written_[i] = layers_written_[retained[i]];
  }
  std::fill(layers_written_.begin() + static_cast<std::ptrdiff_t>(retained.size()),
            layers_written_.end(), 0);
  len_ = retained.size();
  extent_ = retained.size();
  return {retained.begin(), retained.end()};
}

void KVCacheArena::set_read_tracking(bool enabled) {
  track_reads_ = enabled;
  reads_.clear();
}

BatchKVCache::BatchKVCache(CacheShape shape, std::size_t beams) : shape_(shape) {
  if (shape_.n_layers == 0 || shape_.entry_width() == 0) {
    throw Error(ErrorCode::kInvalidConfig, "batch cache needs at least one layer and head");
  }
  beams_.resize(beams);
  for (auto& b : beams_) {
    b.keys.resize(shape_.n_layers);
    b.values.resize(shape_.n_layers);
  }
}

const BatchKVCache::Beam& BatchKVCache::beam_at(std::size_t beam) const {
  if (beam >= beams_.size()) {
    throw Error(ErrorCode::kIndexOutOfRange, "beam " + std::to_string(beam));
  }
  return beams_[beam];
}

std::size_t BatchKVCache::length(std::size_t beam) const {
  return beam_at(beam).keys[0].size() / shape_.entry_width();
}

void BatchKVCache::append(std::size_t beam, std::size_t layer, std::span<const double> k,
                          std::span<const double> v) {
  if (beam >= beams_.size() || layer >= shape_.n_layers) {
    throw Error(ErrorCode::kIndexOutOfRange, "batch append out of range");
  }
  if (k.size() != shape_.entry_width() || v.size() != shape_.entry_width()) {
    throw Error(ErrorCode::kDimensionMismatch, "kv entry width mismatch");
  }
  auto& b = beams_[beam];
  b.keys[layer].insert(b.keys[layer].end(), k.begin(), k.end());
  b.values[layer].insert(b.values[layer].end(), v.begin(), v.end());
}

std::span<const double> BatchKVCache::key(std::size_t beam, std::size_t layer,
                                          std::size_t pos) const {
  const auto& b = beam_at(beam);
  const std::size_t w = shape_.entry_width();
  if (layer >= shape_.n_layers || (pos + 1) * w > b.keys[layer].size()) {
    throw Error(ErrorCode::kIndexOutOfRange, "batch key out of range");
  }
  return {b.keys[layer].data() + pos * w, w};
}

std::span<const double> BatchKVCache::value(std::size_t beam, std::size_t layer,
                                            std::size_t pos) const {
  const auto& b = beam_at(beam);
  const std::size_t w = shape_.entry_width();
  if (layer >= shape_.n_layers || (pos + 1) * w > b.values[layer].size()) {
    throw Error(ErrorCode::kIndexOutOfRange, "batch value out of range");
  }
  return {b.values[layer].data() + pos * w, w};
}

void BatchKVCache::reorder_beams(std::span<const std::size_t> parents) {
  for (std::size_t p : parents) {
    if (p >= beams_.size()) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "parent beam " + std::to_string(p) + " of " + std::to_string(beams_.size()));
    }
  }
  std::vector<Beam> next;
  next.reserve(parents.size());
  for (std::size_t p : parents) next.push_back(beams_[p]);
  beams_ = std::move(next);
}

std::size_t entry_count(const KVCacheArena& arena) { return arena.len(); }

std::size_t entry_count(const BatchKVCache& cache) {
  std::size_t n = 0;
  for (std::size_t b = 0; b < cache.beam_count(); ++b) n += cache.length(b);
  return n;
}

}  // namespace triebeam
