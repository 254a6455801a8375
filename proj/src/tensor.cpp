// SPDX-License-Identifier: Apache-2.0
#include "newsret/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "newsret/error.hpp"

namespace newsret {
namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  for (std::size_t extent : shape) {
    if (extent == 0) fail(ErrorCode::kDimension, "tensor extents must be positive");
  }
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    fail(ErrorCode::kDimension, "data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_string());
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, std::vector<double>{value}); }

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) fail(ErrorCode::kDimension, "expected a matrix, got " + shape_string());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) fail(ErrorCode::kDimension, "expected a matrix, got " + shape_string());
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) fail(ErrorCode::kDimension, "item() on non-scalar " + shape_string());
  return data_[0];
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_string() const {
  std::string out = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape_[i]);
  }
  return out + "]";
}

}  // namespace newsret
