// SPDX-License-Identifier: Apache-2.0
#include "newsret/optim.hpp"

#include <cmath>

#include "newsret/error.hpp"

namespace newsret {

void adam_step(std::span<Parameter* const> params, const GradientMap& grads,
               OptimizerState& state, double lr) {
  if (!(lr > 0.0)) fail(ErrorCode::kConfig, "adam_step: learning rate must be positive");
  const AdamConfig& cfg = state.config;
  const std::uint64_t step = state.step + 1;
  const double correct1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double correct2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));

  for (Parameter* param : params) {
    auto [it, inserted] = state.moments.try_emplace(param->name);
    AdamMoments& mom = it->second;
    if (inserted) {
      mom.first = Tensor(param->value.shape(), 0.0);
      mom.second = Tensor(param->value.shape(), 0.0);
    } else if (!mom.first.same_shape(param->value)) {
      fail(ErrorCode::kDimension, "adam_step: moment shape mismatch for " + param->name);
    }
    const Tensor* grad = nullptr;
    if (auto g = grads.find(param); g != grads.end()) {
      grad = &g->second;
      if (!grad->same_shape(param->value)) {
        fail(ErrorCode::kDimension, "adam_step: gradient shape " + grad->shape_string() +
                                        " does not match " + param->name + " " +
                                        param->value.shape_string());
      }
    }
    auto w = param->value.data();
    auto m = mom.first.data();
    auto v = mom.second.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = grad ? grad->data()[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
  state.step = step;
}

double lr_at_step(std::uint64_t step, std::uint64_t warmup, std::uint64_t total, double peak_lr) {
  if (warmup == 0) fail(ErrorCode::kConfig, "lr schedule: warmup must be positive");
  if (total <= warmup) fail(ErrorCode::kConfig, "lr schedule: total steps must exceed warmup");
  if (!(peak_lr > 0.0)) fail(ErrorCode::kConfig, "lr schedule: peak learning rate must be positive");
  if (step >= total) return 0.0;
  if (step <= warmup) {
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  return peak_lr * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

}  // namespace newsret
