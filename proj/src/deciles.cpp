// SPDX-License-Identifier: Apache-2.0
#include "newsret/deciles.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "newsret/error.hpp"
#include "newsret/text_corpus.hpp"

namespace newsret {

std::vector<int> assign_deciles(std::span<const KeyedValue> values) {
  const std::size_t n = values.size();
  if (n < kDeciles) {
    fail(ErrorCode::kInsufficientUniverse,
         "decile assignment needs at least 10 values, got " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a].value != values[b].value) return values[a].value < values[b].value;
    return values[a].key < values[b].key;
  });
  std::vector<int> labels(n, 0);
  for (std::size_t rank = 0; rank < n; ++rank) {
    labels[order[rank]] = static_cast<int>((kDeciles * rank) / n);
  }
  return labels;
}

std::size_t DecileTable::total() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.count;
  return n;
}

DecileTable compute_decile_table(std::span<const Forecast> forecasts) {
  std::map<Date, std::vector<const Forecast*>> by_date;
  for (const auto& f : forecasts) {
    if (!std::isfinite(f.predicted) || !std::isfinite(f.actual)) {
      fail(ErrorCode::kNumeric, "non-finite forecast for (" + f.date.to_string() + ", " + f.stock_id + ")");
    }
    by_date[f.date].push_back(&f);
  }
  std::array<double, kDeciles> sq_err{}, hits{}, ret_sum{};
  DecileTable table;
  for (const auto& [date, group] : by_date) {
    std::set<std::string> ids;
    std::vector<KeyedValue> predicted, actual;
    for (const Forecast* f : group) {
      if (!ids.insert(f->stock_id).second) {
        fail(ErrorCode::kData, "duplicate forecast for (" + date.to_string() + ", " + f->stock_id + ")");
      }
      predicted.push_back({f->stock_id, f->predicted});
      actual.push_back({f->stock_id, f->actual});
    }
    const auto pred_decile = assign_deciles(predicted);
    const auto true_decile = assign_deciles(actual);
    for (std::size_t i = 0; i < group.size(); ++i) {
      const auto d = static_cast<std::size_t>(pred_decile[i]);
      const double err = group[i]->predicted - group[i]->actual;
      table.rows[d].count += 1;
      sq_err[d] += err * err;
      hits[d] += pred_decile[i] == true_decile[i] ? 1.0 : 0.0;
      ret_sum[d] += group[i]->actual;
    }
  }
  for (std::size_t d = 0; d < kDeciles; ++d) {
    DecileRow& row = table.rows[d];
    if (row.count == 0) continue;
    const double n = static_cast<double>(row.count);
    row.rmse = std::sqrt(sq_err[d] / n);
    row.precision = hits[d] / n;
    row.mean_return = ret_sum[d] / n;
  }
  return table;
}

std::string decile_table_csv(const DecileTable& table) {
  std::string out = "decile,count,rmse,precision,mean_return\n";
  for (std::size_t d = 0; d < kDeciles; ++d) {
    const DecileRow& r = table.rows[d];
    out += std::to_string(d) + ',' + std::to_string(r.count) + ',' + format_decimal(r.rmse) + ',' +
           (r.count ? format_decimal(r.precision) : std::string()) + ',' + format_decimal(r.mean_return) + '\n';
  }
  return out;
}

void write_decile_table_csv(const std::filesystem::path& path, const DecileTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << decile_table_csv(table);
}

}  // namespace newsret
