// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "newsret/date.hpp"

namespace newsret {

inline constexpr std::size_t kDeciles = 10;

struct Forecast {
  std::string stock_id;
  Date date;
  double predicted = 0.0;
  double actual = 0.0;
};

struct KeyedValue {
  std::string key;
  double value = 0.0;
};

/// Decile label per input position. Items are ranked ascending by value with
/// ties broken by ascending key; rank i of S gets floor(10 i / S).
std::vector<int> assign_deciles(std::span<const KeyedValue> values);

struct DecileRow {
  std::size_t count = 0;
  double rmse = 0.0;
  double precision = 0.0;  // meaningful only when count > 0
  double mean_return = 0.0;
};

struct DecileTable {
  std::array<DecileRow, kDeciles> rows{};
  std::size_t total() const;
};

/// Pools (prediction-decile, forecast) pairs across dates, then computes per
/// decile RMSE, the fraction whose truth-decile matches, and mean actual return.
DecileTable compute_decile_table(std::span<const Forecast> forecasts);

/// `decile,count,rmse,precision,mean_return`, 10 rows.
std::string decile_table_csv(const DecileTable& table);
void write_decile_table_csv(const std::filesystem::path& path, const DecileTable& table);

}  // namespace newsret
