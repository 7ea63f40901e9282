// Copyright 2026 The triebeam Authors
// SPDX-License-Identifier: Apache-2.0

#include "triebeam/numkernel.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "triebeam/error.hpp"

namespace triebeam {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != rows * cols) {
    throw Error(ErrorCode::kDimensionMismatch,
                "matrix data length " + std::to_string(data.size()) + " != " +
                    std::to_string(rows) + "x" + std::to_string(cols));
  }
}

AllowRow AllowMask::row(std::size_t r) const {
  AllowRow out(cols_);
  for (std::size_t c = 0; c < cols_; ++c) out[c] = get(r, c);
  return out;
}

std::size_t AllowMask::allowed_count(std::size_t r) const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < cols_; ++c) n += bits_[r * cols_ + c];
  return n;
}

AllowMask AllowMask::select_rows(std::span<const std::size_t> row_indices,
                                 std::size_t cols) const {
  AllowMask out(row_indices.size(), cols);
  for (std::size_t i = 0; i < row_indices.size(); ++i) {
    const std::size_t src = row_indices[i];
    if (src >= rows_) {
      throw Error(ErrorCode::kIndexOutOfRange, "mask row " + std::to_string(src));
    }
    const std::size_t n = std::min(cols, cols_);
    for (std::size_t c = 0; c < n; ++c) out.set(i, c, get(src, c));
  }
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw Error(ErrorCode::kDimensionMismatch,
                "matmul " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                    " by " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
  Matrix out(a.rows, b.cols);
  // i-k-j loop: each output element still accumulates over k in ascending order.
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* dst = out.data.data() + i * out.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double lhs = a.data[i * a.cols + k];
      const double* src = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) dst[j] += lhs * src[j];
    }
  }
  return out;
}

std::vector<double> softmax_masked(std::span<const double> scores, const AllowRow& allow) {
  if (scores.size() != allow.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "softmax scores/allow length mismatch");
  }
  double max_score = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (allow[i]) {
      any = true;
      max_score = std::max(max_score, scores[i]);
    }
  }
  if (!any) throw Error(ErrorCode::kAllBlockedRow, "attention row has no allowed slot");

  std::vector<double> out(scores.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!allow[i]) continue;
    out[i] = std::exp(scores[i] - max_score);
    sum += out[i];
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (allow[i]) out[i] /= sum;
  }
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double v : logits) max_logit = std::max(max_logit, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - max_logit);
  const double log_z = max_logit + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
  return out;
}

std::vector<double> rope_rotate(std::span<const double> vec, std::size_t position,
                                double base) {
  if (vec.size() % 2 != 0) {
    throw Error(ErrorCode::kOddLength,
                "rotary embedding needs an even length, got " + std::to_string(vec.size()));
  }
  const double d = static_cast<double>(vec.size());
  const double pos = static_cast<double>(position);
  std::vector<double> out(vec.size());
  for (std::size_t i = 0; i < vec.size() / 2; ++i) {
    const double angle = pos * std::pow(base, -2.0 * static_cast<double>(i) / d);
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double x0 = vec[2 * i];
    const double x1 = vec[2 * i + 1];
    out[2 * i] = x0 * c - x1 * s;
    out[2 * i + 1] = x0 * s + x1 * c;
  }
  return out;
}

std::vector<double> rms_norm(std::span<const double> vec, std::span<const double> gain,
                             double eps) {
  if (vec.size() != gain.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "rms_norm gain length mismatch");
  }
  if (vec.empty()) return {};
  double sq = 0.0;
  for (double v : vec) sq += v * v;
  const double denom = std::sqrt(sq / static_cast<double>(vec.size()) + eps);
  std::vector<double> out(vec.size());
  for (std::size_t i = 0; i < vec.size(); ++i) {
    // Zero vector with eps = 0 would divide 0 by 0; the result is still 0.
    out[i] = denom == 0.0 ? 0.0 : vec[i] * gain[i] / denom;
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kDimensionMismatch, "dot length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace triebeam
