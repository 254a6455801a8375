// SPDX-License-Identifier: Apache-2.0
#include "newsret/forecaster.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "newsret/checkpoint.hpp"
#include "newsret/error.hpp"
#include "newsret/optim.hpp"

namespace newsret {
namespace {

std::size_t lora_rank_of(const MiniLlm& model) {
  const auto linears = model.adaptable_linears();
  if (linears.empty() || !linears.front()->lora) return 0;
  return linears.front()->lora->a.value.cols();
}

double lora_scale_of(const MiniLlm& model) {
  const auto linears = model.adaptable_linears();
  if (linears.empty() || !linears.front()->lora) return 0.0;
  return linears.front()->lora->scale;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

const char* to_string(PoolingMode mode) noexcept {
  return mode == PoolingMode::kBottleneck ? "bottleneck" : "aggregated";
}

PoolingMode parse_pooling_mode(std::string_view text) {
  if (text == "bottleneck") return PoolingMode::kBottleneck;
  if (text == "aggregated") return PoolingMode::kAggregated;
  fail(ErrorCode::kConfig, "unknown pooling mode '" + std::string(text) + "'");
}

ForecastHead ForecastHead::init(std::size_t d_model, double std_dev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ForecastHead head;
  head.weight = Parameter{"head.weight", Tensor({d_model, 1}, 0.0), true};
  if (std_dev > 0.0) {
    std::normal_distribution<double> dist(0.0, std_dev);
    for (double& v : head.weight.value.data()) v = dist(rng);
  }
  head.offset = Parameter{"head.offset", Tensor({1, 1}, 0.0), true};
  return head;
}

std::vector<Parameter*> ReturnForecaster::trainable_parameters() {
  std::vector<Parameter*> out = model.trainable_parameters();
  out.push_back(&head.weight);
  out.push_back(&head.offset);
  return out;
}

std::vector<const Parameter*> ReturnForecaster::all_parameters() const {
  std::vector<const Parameter*> out = model.parameters();
  out.push_back(&head.weight);
  out.push_back(&head.offset);
  return out;
}

void attach_lora(MiniLlm& model, std::size_t rank, double alpha, std::uint64_t seed) {
  if (rank == 0) fail(ErrorCode::kConfig, "LoRA rank must be at least 1");
  if (!(alpha > 0.0)) fail(ErrorCode::kConfig, "LoRA alpha must be positive");
  auto linears = model.adaptable_linears();
  for (const Linear* lin : linears) {
    if (rank > std::min(lin->in_dim(), lin->out_dim())) {
      fail(ErrorCode::kConfig, "LoRA rank " + std::to_string(rank) + " exceeds dimensions of " + lin->weight.name);
    }
    if (lin->lora) fail(ErrorCode::kConfig, "LoRA already attached to " + lin->weight.name);
  }
  for (Parameter* p : model.parameters()) p->trainable = false;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  for (Linear* lin : linears) {
    const std::string stem = lin->weight.name.substr(0, lin->weight.name.rfind('.'));
    LoraPair pair;
    pair.a = Parameter{stem + ".lora_a", Tensor({lin->in_dim(), rank}, 0.0), true};
    for (double& v : pair.a.value.data()) v = dist(rng);
    pair.b = Parameter{stem + ".lora_b", Tensor({rank, lin->out_dim()}, 0.0), true};
    pair.scale = alpha / static_cast<double>(rank);
    lin->lora = std::move(pair);
  }
}

Var pool_bottleneck(Var hidden, std::size_t eos_position, std::size_t valid_length) {
  if (eos_position >= valid_length) {
    fail(ErrorCode::kContract, "bottleneck pooling: EOS position outside the valid region");
  }
  return ops::slice_rows(hidden, eos_position, 1);
}

Var pool_aggregated(Var hidden, std::size_t valid_length) {
  if (valid_length == 0) fail(ErrorCode::kPrecondition, "aggregated pooling: no valid rows");
  if (valid_length > hidden.value().rows()) fail(ErrorCode::kDimension, "aggregated pooling: valid length too large");
  return ops::mean_rows(ops::slice_rows(hidden, 0, valid_length));
}

std::vector<double> pool_bottleneck(const HiddenStates& hidden, std::size_t eos_position) {
  Tape tape(false);
  Var v = pool_bottleneck(tape.constant(hidden.states), eos_position, hidden.valid_length);
  return {v.value().data().begin(), v.value().data().end()};
}

std::vector<double> pool_aggregated(const HiddenStates& hidden) {
  Tape tape(false);
  Var v = pool_aggregated(tape.constant(hidden.states), hidden.valid_length);
  return {v.value().data().begin(), v.value().data().end()};
}

Var forecast(Tape& tape, const ReturnForecaster& forecaster, std::span<const TokenId> seq) {
  const std::size_t valid = valid_length(seq);
  if (valid == 0) fail(ErrorCode::kPrecondition, "forecast: empty sequence");
  const TokenId end_token = sequence_end_token(forecaster.model.config().arch);
  if (seq[valid - 1] != end_token) fail(ErrorCode::kContract, "forecast: sequence is not EOS-terminated");
  Var hidden = forecaster.model.encode(tape, seq);
  Var pooled = forecaster.pooling == PoolingMode::kBottleneck ? pool_bottleneck(hidden, valid - 1, valid)
                                                              : pool_aggregated(hidden, valid);
  return ops::add(ops::matmul(pooled, tape.leaf(forecaster.head.weight)), tape.leaf(forecaster.head.offset));
}

double predict_return(const ReturnForecaster& forecaster, std::span<const TokenId> seq) {
  Tape tape(false);
  return forecast(tape, forecaster, seq).value().item();
}

std::vector<double> predict_returns(const ReturnForecaster& forecaster, std::span<const Instance> instances) {
  std::vector<double> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(predict_return(forecaster, inst.sequence));
  return out;
}

double evaluate_mse(const ReturnForecaster& forecaster, std::span<const Instance> instances) {
  if (instances.empty()) fail(ErrorCode::kPrecondition, "evaluate_mse: no instances");
  double total = 0.0;
  for (const auto& inst : instances) {
    const double d = predict_return(forecaster, inst.sequence) - inst.label;
    total += d * d;
  }
  return total / static_cast<double>(instances.size());
}

FineTuneResult finetune(ReturnForecaster& forecaster, std::span<const Instance> train,
                        std::span<const Instance> validation, const FineTuneConfig& config) {
  if (train.empty()) fail(ErrorCode::kPrecondition, "finetune: empty training set");
  if (config.batch == 0 || config.epochs == 0) fail(ErrorCode::kConfig, "finetune: batch and epochs must be positive");
  const std::size_t per_epoch = (train.size() + config.batch - 1) / config.batch;
  const std::size_t total_steps = per_epoch * config.epochs;

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::vector<Parameter*> params = forecaster.trainable_parameters();
  OptimizerState state;
  FineTuneResult result;
  std::vector<Tensor> best;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t stop = std::min(order.size(), start + config.batch);
      Tape tape;
      std::vector<Var> preds;
      Tensor labels({stop - start, 1}, 0.0);
      for (std::size_t i = start; i < stop; ++i) {
        const Instance& inst = train[order[i]];
        preds.push_back(forecast(tape, forecaster, inst.sequence));
        labels.at(i - start, 0) = inst.label;
      }
      Var diff = ops::sub(ops::concat_rows(preds), tape.constant(std::move(labels)));
      Var loss = ops::mean(ops::mul(diff, diff));
      const double value = loss.value().item();
      result.step_loss.push_back(value);
      epoch_loss += value;
      const GradientMap grads = tape.backward(loss);
      ++step;
      adam_step(params, grads, state, lr_at_step(step, config.warmup, total_steps + 1, config.peak_lr));
    }
    result.train_mse.push_back(epoch_loss / static_cast<double>(per_epoch));
    if (!validation.empty()) {
      const double val = evaluate_mse(forecaster, validation);
      result.val_mse.push_back(val);
      if (val < best_val) {
        best_val = val;
        result.best_epoch = epoch;
        best.clear();
        for (const Parameter* p : params) best.push_back(p->value);
      }
    } else {
      result.best_epoch = epoch;
    }
  }
  if (!best.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  }
  return result;
}

void save_forecaster(const ReturnForecaster& forecaster, const std::filesystem::path& stem) {
  save_checkpoint(with_suffix(stem, ".ckpt.json"), forecaster.all_parameters());
  nlohmann::ordered_json doc = {{"model", nlohmann::json::parse(forecaster.model.config().to_json())},
                                {"pooling", to_string(forecaster.pooling)},
                                {"lora_rank", lora_rank_of(forecaster.model)},
                                {"lora_scale", lora_scale_of(forecaster.model)}};
  std::ofstream out(with_suffix(stem, ".config.json"), std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + with_suffix(stem, ".config.json").string());
  out << doc.dump(2) << '\n';
}

ReturnForecaster load_forecaster(const std::filesystem::path& stem) {
  const auto config_path = with_suffix(stem, ".config.json");
  std::ifstream in(config_path, std::ios::binary);
  if (!in) fail(ErrorCode::kDependency, "missing forecaster config " + config_path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, config_path.string() + ": " + e.what());
  }
  const ModelConfig model_config = ModelConfig::from_json(doc.at("model").dump());
  ReturnForecaster f{MiniLlm::build(model_config, 0), ForecastHead::init(model_config.d_model, 0.0, 0),
                     parse_pooling_mode(doc.value("pooling", std::string("aggregated")))};
  const auto rank = doc.value("lora_rank", std::size_t{0});
  if (rank > 0) {
    const double scale = doc.value("lora_scale", 1.0);
    attach_lora(f.model, rank, scale * static_cast<double>(rank), 0);
  }
  const TensorMap tensors = load_checkpoint(with_suffix(stem, ".ckpt.json"));
  std::vector<Parameter*> params = f.model.parameters();
  params.push_back(&f.head.weight);
  params.push_back(&f.head.offset);
  apply_checkpoint(tensors, params, true);
  return f;
}

}  // namespace newsret
