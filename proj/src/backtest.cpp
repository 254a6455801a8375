// SPDX-License-Identifier: Apache-2.0
#include "newsret/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "newsret/error.hpp"

namespace newsret {
namespace {

double leg_mean(const std::vector<std::string>& leg, Date date, const ReturnTable& returns) {
  double total = 0.0;
  for (const auto& id : leg) {
    const auto r = returns.find(id, date);
    if (!r) fail(ErrorCode::kData, "missing forward return for (" + date.to_string() + ", " + id + ")");
    total += *r;
  }
  return total / static_cast<double>(leg.size());
}

std::string pct_or_dash(double v) { return format_decimal(100.0 * v); }

std::string sharpe_or_dash(const std::optional<double>& v) { return v ? format_decimal(*v) : std::string("-"); }

}  // namespace

const char* to_string(PortfolioKind kind) noexcept {
  return kind == PortfolioKind::kLongOnly ? "long_only" : "long_short";
}

const char* to_string(RankingSource source) noexcept {
  return source == RankingSource::kModelForecast ? "model_forecast" : "sentiment_score";
}

PortfolioSnapshot construct_portfolio(std::span<const ScoredStock> scores_at_date, PortfolioKind kind) {
  if (scores_at_date.empty()) {
    fail(ErrorCode::kInsufficientUniverse, "portfolio construction needs at least 10 candidates, got 0");
  }
  std::vector<KeyedValue> keyed;
  for (const auto& s : scores_at_date) {
    if (s.date != scores_at_date.front().date) fail(ErrorCode::kData, "portfolio construction across dates");
    keyed.push_back({s.stock_id, s.score});
  }
  const std::vector<int> deciles = assign_deciles(keyed);
  PortfolioSnapshot snap;
  snap.date = scores_at_date.front().date;
  for (std::size_t i = 0; i < keyed.size(); ++i) {
    if (deciles[i] == static_cast<int>(kDeciles) - 1) snap.long_leg.push_back(keyed[i].key);
    if (kind == PortfolioKind::kLongShort && deciles[i] == 0) snap.short_leg.push_back(keyed[i].key);
  }
  std::sort(snap.long_leg.begin(), snap.long_leg.end());
  std::sort(snap.short_leg.begin(), snap.short_leg.end());
  snap.long_weight = 1.0 / static_cast<double>(snap.long_leg.size());
  if (!snap.short_leg.empty()) snap.short_weight = 1.0 / static_cast<double>(snap.short_leg.size());
  return snap;
}

BacktestStats backtest(std::span<const ScoredStock> scores, const ReturnTable& returns, const PortfolioSpec& spec) {
  std::map<Date, std::vector<ScoredStock>> by_date;
  for (const auto& s : scores) by_date[s.date].push_back(s);
  if (by_date.size() < 2) fail(ErrorCode::kPrecondition, "backtest needs at least 2 rebalance dates");
  std::vector<Date> dates;
  std::vector<double> monthly;
  for (const auto& [date, group] : by_date) {
    const PortfolioSnapshot snap = construct_portfolio(group, spec.kind);
    double r = leg_mean(snap.long_leg, date, returns);
    if (spec.kind == PortfolioKind::kLongShort) r -= leg_mean(snap.short_leg, date, returns);
    dates.push_back(date);
    monthly.push_back(r);
  }
  return make_stats(std::move(dates), std::move(monthly));
}

BacktestStats backtest(std::span<const Forecast> forecasts, const PortfolioSpec& spec) {
  std::vector<ScoredStock> scores;
  std::vector<UniverseEntry> realised;
  for (const auto& f : forecasts) {
    scores.push_back({f.stock_id, f.date, f.predicted});
    realised.push_back({f.date, f.stock_id, f.actual});
  }
  return backtest(scores, ReturnTable(realised), spec);
}

BacktestStats make_stats(std::vector<Date> dates, std::vector<double> monthly_returns) {
  BacktestStats stats;
  stats.curve = cumulative_curve(monthly_returns);
  stats.annualized_return = annualized_return(monthly_returns);
  try {
    stats.sharpe = sharpe_ratio(monthly_returns);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kUndefinedSharpe) throw;
  }
  stats.n_months = monthly_returns.size();
  stats.dates = std::move(dates);
  stats.monthly_returns = std::move(monthly_returns);
  return stats;
}

std::vector<double> cumulative_curve(std::span<const double> monthly_returns) {
  if (monthly_returns.empty()) fail(ErrorCode::kPrecondition, "cumulative curve of an empty series");
  std::vector<double> curve;
  curve.reserve(monthly_returns.size());
  double level = 1.0;
  for (double r : monthly_returns) {
    if (r <= -1.0) fail(ErrorCode::kBankrupt, "monthly return " + format_decimal(r) + " wipes out the portfolio");
    level *= 1.0 + r;
    curve.push_back(level);
  }
  return curve;
}

double annualized_return(std::span<const double> monthly_returns) {
  if (monthly_returns.empty()) fail(ErrorCode::kPrecondition, "annualized return of an empty series");
  double level = 1.0;
  for (double r : monthly_returns) level *= 1.0 + r;
  if (!(level > 0.0)) fail(ErrorCode::kDomain, "non-positive cumulative value");
  return std::pow(level, 12.0 / static_cast<double>(monthly_returns.size())) - 1.0;
}

double sharpe_ratio(std::span<const double> monthly_returns) {
  const std::size_t n = monthly_returns.size();
  if (n < 2) fail(ErrorCode::kUndefinedSharpe, "Sharpe ratio needs at least 2 returns");
  const bool constant = std::all_of(monthly_returns.begin(), monthly_returns.end(),
                                    [&](double r) { return r == monthly_returns.front(); });
  double mean = 0.0;
  for (double r : monthly_returns) mean += r;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double r : monthly_returns) ss += (r - mean) * (r - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (constant || sd == 0.0) fail(ErrorCode::kUndefinedSharpe, "zero volatility");
  return mean / sd * std::sqrt(12.0);
}

SentimentLexicon::SentimentLexicon(std::map<std::string, double> polarity) : polarity_(std::move(polarity)) {
  for (const auto& [word, score] : polarity_) {
    if (!(score >= -1.0 && score <= 1.0)) fail(ErrorCode::kData, "lexicon score for '" + word + "' outside [-1, 1]");
  }
}

SentimentLexicon SentimentLexicon::demo() {
  return SentimentLexicon({{"strong", 0.6},
                           {"weak", -0.6},
                           {"good", 0.5},
                           {"bad", -0.5},
                           {"robust", 0.6},
                           {"poor", -0.6},
                           {"solid", 0.4},
                           {"gloomy", -0.5},
                           {"upbeat", 0.5},
                           {"dismal", -0.7},
                           {"climbed", 0.3},
                           {"slipped", -0.3}});
}

SentimentLexicon SentimentLexicon::from_json(std::string_view text) {
  std::map<std::string, double> entries;
  try {
    const auto doc = nlohmann::json::parse(text);
    if (!doc.is_object()) fail(ErrorCode::kParse, "lexicon must be a JSON object");
    for (const auto& [word, score] : doc.items()) entries.emplace(word, score.get<double>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("lexicon: ") + e.what());
  }
  return SentimentLexicon(std::move(entries));
}

SentimentLexicon SentimentLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kDependency, "missing lexicon " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string SentimentLexicon::to_json() const {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& [word, score] : polarity_) doc[word] = score;
  return doc.dump(1);
}

std::optional<double> SentimentLexicon::find(std::string_view word) const {
  if (auto it = polarity_.find(std::string(word)); it != polarity_.end()) return it->second;
  return std::nullopt;
}

double sentiment_score(std::span<const TokenId> sequence, const Vocabulary& vocab, const SentimentLexicon& lexicon) {
  double total = 0.0;
  std::size_t hits = 0;
  for (TokenId id : sequence) {
    if (Vocabulary::is_special(id)) continue;
    if (auto p = lexicon.find(vocab.word(id))) {
      total += *p;
      ++hits;
    }
  }
  return hits ? total / static_cast<double>(hits) : 0.0;
}

std::vector<StrategyRow> compare_strategies(const std::map<std::string, std::vector<ScoredStock>>& strategies,
                                            std::span<const UniverseEntry> universe) {
  const ReturnTable returns(universe);
  std::optional<std::set<Date>> common;
  for (const auto& [name, scores] : strategies) {
    std::set<Date> dates;
    for (const auto& s : scores) dates.insert(s.date);
    if (!common) {
      common = std::move(dates);
    } else if (*common != dates) {
      fail(ErrorCode::kData, "strategy '" + name + "' covers different dates");
    }
  }
  if (!common) fail(ErrorCode::kPrecondition, "no strategies to compare");

  std::map<Date, std::pair<double, std::size_t>> universe_sum;
  for (const auto& e : universe) {
    if (!common->contains(e.date)) continue;
    auto& [sum, count] = universe_sum[e.date];
    sum += e.forward_return;
    ++count;
  }
  std::vector<Date> dates;
  std::vector<double> bench;
  for (const Date& d : *common) {
    auto it = universe_sum.find(d);
    if (it == universe_sum.end()) fail(ErrorCode::kData, "universe has no entries on " + d.to_string());
    dates.push_back(d);
    bench.push_back(it->second.first / static_cast<double>(it->second.second));
  }

  std::vector<StrategyRow> rows;
  rows.push_back({kBenchmarkName, make_stats(std::move(dates), std::move(bench)), std::nullopt});
  for (const auto& [name, scores] : strategies) {
    rows.push_back({name, backtest(scores, returns, {PortfolioKind::kLongOnly, RankingSource::kModelForecast}),
                    backtest(scores, returns, {PortfolioKind::kLongShort, RankingSource::kModelForecast})});
  }
  return rows;
}

std::string comparison_csv(std::span<const StrategyRow> rows) {
  std::string out = "strategy,long_only_ann_return_pct,long_only_sharpe,long_short_ann_return_pct,long_short_sharpe\n";
  for (const auto& row : rows) {
    out += row.name + ',' + pct_or_dash(row.long_only.annualized_return) + ',' + sharpe_or_dash(row.long_only.sharpe);
    if (row.long_short) {
      out += ',' + pct_or_dash(row.long_short->annualized_return) + ',' + sharpe_or_dash(row.long_short->sharpe);
    } else {
      out += ",-,-";
    }
    out += '\n';
  }
  return out;
}

std::string monthly_returns_csv(const BacktestStats& stats) {
  std::string out = "date,return\n";
  for (std::size_t i = 0; i < stats.monthly_returns.size(); ++i) {
    out += stats.dates[i].to_string() + ',' + format_decimal(stats.monthly_returns[i]) + '\n';
  }
  return out;
}

std::string curve_csv(const BacktestStats& stats) {
  std::string out = "date,value\n";
  for (std::size_t i = 0; i < stats.curve.size(); ++i) {
    out += stats.dates[i].to_string() + ',' + format_decimal(stats.curve[i]) + '\n';
  }
  return out;
}

std::string stats_json(const BacktestStats& stats) {
  nlohmann::ordered_json doc = {{"annualized_return", stats.annualized_return},
                                {"sharpe", stats.sharpe ? nlohmann::ordered_json(*stats.sharpe) : nullptr},
                                {"n_months", stats.n_months}};
  return doc.dump(2);
}

}  // namespace newsret
