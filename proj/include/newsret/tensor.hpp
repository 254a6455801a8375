// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace newsret {

/// Dense row-major tensor of doubles. Kernels in this library operate on
/// rank-2 tensors; vectors are carried as 1xN or Nx1 matrices.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values);
  static Tensor scalar(double value);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  /// Unchecked element access; the tensor must be a matrix.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const double& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double item() const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  std::string shape_string() const;

  bool requires_grad = false;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// A named, persistent tensor owned by a model. Frozen parameters still
/// appear on the tape but never receive gradient.
struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

}  // namespace newsret
