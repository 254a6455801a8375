// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "newsret/autodiff.hpp"
#include "newsret/tensor.hpp"

namespace newsret {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  Tensor first;
  Tensor second;
};

struct OptimizerState {
  AdamConfig config;
  std::map<std::string, AdamMoments> moments;  // keyed by parameter name
  std::uint64_t step = 0;
};

/// One bias-corrected adaptive-moment update of `params`. A parameter absent
/// from `grads` is treated as having zero gradient.
void adam_step(std::span<Parameter* const> params, const GradientMap& grads,
               OptimizerState& state, double lr);

/// Linear warmup from 0 to `peak_lr` over [0, warmup], then linear decay to
/// 0 at `total`; 0 beyond `total`.
double lr_at_step(std::uint64_t step, std::uint64_t warmup, std::uint64_t total, double peak_lr);

}  // namespace newsret
