// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "newsret/tensor.hpp"

namespace newsret {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  const Tensor& value() const;
  Tape& tape() const { return *tape_; }
  std::size_t index() const noexcept { return index_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

using GradientMap = std::unordered_map<const Parameter*, Tensor>;

/// Records executed kernels in execution order, which is a topological order
/// of the graph since a node can only reference nodes created before it.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  /// A tape built with `grad_enabled == false` records values only.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Returns the leaf for `param`; repeated calls yield the same node.
  Var leaf(const Parameter& param);
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  const Tensor& value(std::size_t index) const { return nodes_[index].value; }
  const Tensor& grad(std::size_t index) const { return nodes_[index].grad; }
  bool requires_grad(std::size_t index) const { return nodes_[index].requires_grad; }
  /// Gradient buffer of `index`, zero-initialised on first access.
  Tensor& grad_buffer(std::size_t index);

  /// Reverse sweep from a scalar node. Every parameter leaf on the tape gets
  /// an entry; frozen or unreachable ones get zeros.
  GradientMap backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t backward_visits() const noexcept { return backward_visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    const Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> leaves_;
  std::size_t backward_visits_ = 0;
  bool grad_enabled_ = true;
};

/// Enables finite-value validation of every kernel input.
void set_numeric_checks(bool enabled) noexcept;
bool numeric_checks() noexcept;

namespace ops {

Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// x[m,n] + bias[1,n] broadcast over rows.
Var add_bias(Var x, Var bias);
/// Row-wise softmax. `allowed`, when non-empty, is a rows*cols 0/1 mask;
/// disallowed entries get probability exactly 0. Each row needs one allowed entry.
Var softmax_rows(Var x, std::span<const std::uint8_t> allowed = {});
Var layer_norm_rows(Var x, Var gain, Var offset, double eps);
/// GELU, tanh approximation.
Var gelu(Var x);
Var embedding(Var table, std::span<const std::int32_t> ids);
Var sum(Var x);
Var mean(Var x);
/// Column-wise mean over rows: [m,n] -> [1,n].
Var mean_rows(Var x);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
/// Mean over rows of -log softmax(logits)[row, target[row]].
Var cross_entropy_rows(Var logits, std::span<const std::int32_t> targets);

}  // namespace ops
}  // namespace newsret
