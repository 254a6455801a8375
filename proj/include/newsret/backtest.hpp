// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "newsret/date.hpp"
#include "newsret/deciles.hpp"
#include "newsret/market_data.hpp"
#include "newsret/text_corpus.hpp"

namespace newsret {

enum class PortfolioKind { kLongOnly, kLongShort };
enum class RankingSource { kModelForecast, kSentimentScore };

const char* to_string(PortfolioKind kind) noexcept;
const char* to_string(RankingSource source) noexcept;

struct PortfolioSpec {
  PortfolioKind kind = PortfolioKind::kLongOnly;
  RankingSource source = RankingSource::kModelForecast;
};

/// A ranking score for one stock at one rebalance date.
struct ScoredStock {
  std::string stock_id;
  Date date;
  double score = 0.0;
};

/// Equal-weighted legs; the short leg is empty for long-only portfolios.
struct PortfolioSnapshot {
  Date date;
  std::vector<std::string> long_leg;
  std::vector<std::string> short_leg;
  double long_weight = 0.0;
  double short_weight = 0.0;
};

struct BacktestStats {
  std::vector<Date> dates;
  std::vector<double> monthly_returns;
  std::vector<double> curve;
  double annualized_return = 0.0;
  std::optional<double> sharpe;  // nullopt when volatility is zero
  std::size_t n_months = 0;
};

/// Long leg = top-decile stocks; long-short also shorts the bottom decile.
PortfolioSnapshot construct_portfolio(std::span<const ScoredStock> scores_at_date, PortfolioKind kind);

/// Monthly rebalanced backtest. Each month's return is the mean forward return
/// of the long leg, minus that of the short leg for long-short portfolios.
BacktestStats backtest(std::span<const ScoredStock> scores, const ReturnTable& returns, const PortfolioSpec& spec);
/// Ranks by `predicted` and realises `actual`.
BacktestStats backtest(std::span<const Forecast> forecasts, const PortfolioSpec& spec);

/// Assembles stats from a monthly series; Sharpe left empty when undefined.
BacktestStats make_stats(std::vector<Date> dates, std::vector<double> monthly_returns);

std::vector<double> cumulative_curve(std::span<const double> monthly_returns);
/// Geometric: final_cumulative^(12/N) - 1.
double annualized_return(std::span<const double> monthly_returns);
/// mean / sample std * sqrt(12), zero risk-free rate.
double sharpe_ratio(std::span<const double> monthly_returns);

class SentimentLexicon {
 public:
  SentimentLexicon() = default;
  explicit SentimentLexicon(std::map<std::string, double> polarity);

  /// Generic sentiment words of the synthetic vocabulary.
  static SentimentLexicon demo();
  static SentimentLexicon from_json(std::string_view text);
  static SentimentLexicon load(const std::filesystem::path& path);
  std::string to_json() const;

  std::optional<double> find(std::string_view word) const;
  const std::map<std::string, double>& entries() const noexcept { return polarity_; }

 private:
  std::map<std::string, double> polarity_;
};

/// Mean polarity over tokens found in the lexicon; 0 with no hits.
double sentiment_score(std::span<const TokenId> sequence, const Vocabulary& vocab, const SentimentLexicon& lexicon);

struct StrategyRow {
  std::string name;
  BacktestStats long_only;
  std::optional<BacktestStats> long_short;  // absent for the universe benchmark
};

inline constexpr const char* kBenchmarkName = "Universe Equally-Weighted";

/// One row per strategy plus the equally weighted universe benchmark first.
std::vector<StrategyRow> compare_strategies(const std::map<std::string, std::vector<ScoredStock>>& strategies,
                                            std::span<const UniverseEntry> universe);

std::string comparison_csv(std::span<const StrategyRow> rows);
std::string monthly_returns_csv(const BacktestStats& stats);
std::string curve_csv(const BacktestStats& stats);
std::string stats_json(const BacktestStats& stats);

}  // namespace newsret
