// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "newsret/autodiff.hpp"
#include "newsret/market_data.hpp"
#include "newsret/mini_llm.hpp"

namespace newsret {

enum class PoolingMode { kBottleneck, kAggregated };

const char* to_string(PoolingMode mode) noexcept;
PoolingMode parse_pooling_mode(std::string_view text);

/// Dense map from the pooled representation to a return: w·h + offset.
struct ForecastHead {
  Parameter weight;  // [D, 1]
  Parameter offset;  // [1, 1]

  static ForecastHead init(std::size_t d_model, double std_dev, std::uint64_t seed);
};

struct FineTuneConfig {
  std::size_t batch = 32;
  double peak_lr = 1e-5;
  std::size_t warmup = 100;
  std::size_t epochs = 10;
  PoolingMode pooling = PoolingMode::kAggregated;
  std::size_t lora_rank = 4;
  double lora_alpha = 4.0;
  double head_init_std = 1e-3;
  std::uint64_t seed = 0;
};

/// f∘g: a (LoRA-adapted) language model, a pooling rule and a head.
struct ReturnForecaster {
  MiniLlm model;
  ForecastHead head;
  PoolingMode pooling = PoolingMode::kAggregated;

  std::vector<Parameter*> trainable_parameters();
  std::vector<const Parameter*> all_parameters() const;
};

/// Freezes every base parameter and adds a rank-`rank` adapter to each
/// attention and feed-forward linear map: A ~ N(0, 0.02), B = 0, scale alpha/rank.
void attach_lora(MiniLlm& model, std::size_t rank, double alpha, std::uint64_t seed);

/// Row `eos_position` of the hidden states.
Var pool_bottleneck(Var hidden, std::size_t eos_position, std::size_t valid_length);
/// Mean of rows [0, valid_length).
Var pool_aggregated(Var hidden, std::size_t valid_length);
std::vector<double> pool_bottleneck(const HiddenStates& hidden, std::size_t eos_position);
std::vector<double> pool_aggregated(const HiddenStates& hidden);

/// Forecast [1,1] for one EOS-terminated sequence.
Var forecast(Tape& tape, const ReturnForecaster& forecaster, std::span<const TokenId> seq);
double predict_return(const ReturnForecaster& forecaster, std::span<const TokenId> seq);
std::vector<double> predict_returns(const ReturnForecaster& forecaster, std::span<const Instance> instances);

/// Mean squared forecast error.
double evaluate_mse(const ReturnForecaster& forecaster, std::span<const Instance> instances);

struct FineTuneResult {
  std::vector<double> step_loss;
  std::vector<double> train_mse;  // per epoch, averaged over that epoch's batches
  std::vector<double> val_mse;    // per epoch; empty without validation data
  std::size_t best_epoch = 0;
};

/// Minimises batch MSE over the trainable (LoRA and head) parameters and
/// restores the parameters of the best validation epoch.
FineTuneResult finetune(ReturnForecaster& forecaster, std::span<const Instance> train,
                        std::span<const Instance> validation, const FineTuneConfig& config);

/// Writes `<stem>.ckpt.json` and `<stem>.config.json` (model config, pooling, adapter shape).
void save_forecaster(const ReturnForecaster& forecaster, const std::filesystem::path& stem);
ReturnForecaster load_forecaster(const std::filesystem::path& stem);

}  // namespace newsret
