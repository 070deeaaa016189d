// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tcd {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles. Value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  /// Size of axis `axis`; negative values count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Bitwise equality of shape and contents.
  bool operator==(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Largest |a_i - b_i|; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

}  // namespace tcd
