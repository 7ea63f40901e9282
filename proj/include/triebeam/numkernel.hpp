// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace triebeam {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  bool operator==(const Matrix&) const = default;
};

// One row of an attention mask: true means the key slot may be attended.
using AllowRow = std::vector<bool>;

// rows x cols boolean matrix; column index is a cache slot.
class AllowMask {
 public:
  AllowMask() = default;
  AllowMask(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), bits_(rows * cols, 0) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  bool get(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool allowed) {
    bits_[r * cols_ + c] = allowed ? 1 : 0;
  }

  AllowRow row(std::size_t r) const;
  std::size_t allowed_count(std::size_t r) const;

  // New mask keeping the listed rows (in the given order) and widening to
  // `cols` columns; added columns start blocked.
  AllowMask select_rows(std::span<const std::size_t> row_indices, std::size_t cols) const;

  bool operator==(const AllowMask&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<unsigned char> bits_;
};

// Standard product. The inner dimension is accumulated strictly left to right.
Matrix matmul(const Matrix& a, const Matrix& b);

// Softmax over allowed entries; blocked entries are exactly zero.
std::vector<double> softmax_masked(std::span<const double> scores, const AllowRow& allow);

// log-softmax over the full vector, fixed summation order.
std::vector<double> log_softmax(std::span<const double> logits);

// Rotates consecutive pairs (v[2i], v[2i+1]) by position * base^(-2i/d).
std::vector<double> rope_rotate(std::span<const double> vec, std::size_t position,
                                double base);

std::vector<double> rms_norm(std::span<const double> vec, std::span<const double> gain,
                             double eps);

double dot(std::span<const double> a, std::span<const double> b);

}  // namespace triebeam
