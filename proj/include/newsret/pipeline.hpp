// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "newsret/backtest.hpp"
#include "newsret/error.hpp"
#include "newsret/forecaster.hpp"
#include "newsret/mini_llm.hpp"
#include "newsret/text_corpus.hpp"

namespace newsret {

enum class Stage { kGenData, kPretrain, kFinetune, kPredict, kEvaluate, kBacktest, kReport };

inline constexpr std::string_view kStageNames[] = {"gen-data", "pretrain", "finetune", "predict",
                                                   "evaluate", "backtest", "report"};

Stage parse_stage(std::string_view name);
std::string_view stage_name(Stage stage) noexcept;

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "run";
  // Input paths; relative ones resolve against out_dir.
  std::filesystem::path news = "news.jsonl";
  std::filesystem::path universe = "universe.csv";
  std::filesystem::path vocab = "vocab.json";
  std::filesystem::path lexicon = "lexicon.json";

  UniverseSpec synthetic;
  SignalSpec signal;
  ModelConfig model;
  PretrainSchedule pretrain;
  FineTuneConfig finetune;
  int window_days = 7;
  Date train_end{2015, 12, 31};
  Date val_end{2016, 12, 31};
  std::vector<PortfolioKind> portfolios{PortfolioKind::kLongOnly, PortfolioKind::kLongShort};
  std::string strategy_name = "MiniLLM";

  /// `seed` must be present unless `seed_override` is given.
  static RunConfig from_json(std::string_view text, std::optional<std::uint64_t> seed_override = std::nullopt);
  static RunConfig load(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = std::nullopt);

  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

/// Names of every artifact a stage writes, relative to out_dir.
namespace artifacts {
inline constexpr const char* kPretrainStem = "pretrained";
inline constexpr const char* kFinetuneStem = "finetuned";
inline constexpr const char* kPretrainLoss = "pretrain_loss.csv";
inline constexpr const char* kFinetuneLoss = "finetune_loss.csv";
inline constexpr const char* kSplitManifest = "split.json";
inline constexpr const char* kForecasts = "forecasts.csv";
inline constexpr const char* kDecileTable = "decile_table.csv";
inline constexpr const char* kComparison = "comparison.csv";
inline constexpr const char* kReport = "report.md";
}  // namespace artifacts

inline constexpr const char* kSentimentStrategy = "Sentiment_Lexicon";

void run_stage(Stage stage, const RunConfig& config);

/// Loads the config, applies overrides and runs one stage.
void run_command(std::string_view command, const std::filesystem::path& config_path,
                 const std::optional<std::filesystem::path>& out_dir, std::optional<std::uint64_t> seed);

/// Process exit status for an error: 1 usage, 2 data, 3 dependency.
int exit_code_for(ErrorCode code) noexcept;

/// Forecast file rows.
struct ForecastRecord {
  Date date;
  std::string stock_id;
  double forecast = 0.0;
};
void write_forecasts_csv(const std::filesystem::path& path, std::span<const ForecastRecord> rows);
std::vector<ForecastRecord> load_forecasts_csv(const std::filesystem::path& path);

/// Markdown summary of evaluate/backtest artifacts in `out_dir`; also written to report.md.
std::string emit_report(const std::filesystem::path& out_dir);

/// Pretraining sequences: content of the training-period instances with specials removed.
std::vector<TokenSequence> pretraining_corpus(std::span<const Instance> instances);

}  // namespace newsret
