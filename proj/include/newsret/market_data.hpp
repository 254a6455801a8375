// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "newsret/date.hpp"
#include "newsret/mini_llm.hpp"
#include "newsret/records.hpp"
#include "newsret/text_corpus.hpp"

namespace newsret {

/// One (stock, date) training or test record.
struct Instance {
  std::string stock_id;
  Date date;
  TokenSequence sequence;  // specials applied, length <= max_len
  double label = 0.0;
};

/// Parses news JSONL; result sorted by (stock_id, timestamp), ties keep file order.
std::vector<NewsItem> parse_news_jsonl(std::istream& in, const std::string& source);
std::vector<NewsItem> load_news(const std::filesystem::path& path);

/// Parses a `date,stock_id,forward_return` CSV.
std::vector<UniverseEntry> parse_universe_csv(std::istream& in, const std::string& source);
std::vector<UniverseEntry> load_universe(const std::filesystem::path& path);

class NewsIndex {
 public:
  explicit NewsIndex(std::span<const NewsItem> news);
  /// Items for `stock_id` in ascending timestamp order.
  std::span<const NewsItem> for_stock(const std::string& stock_id) const;

 private:
  std::unordered_map<std::string, std::vector<NewsItem>> by_stock_;
};

class ReturnTable {
 public:
  ReturnTable() = default;
  explicit ReturnTable(std::span<const UniverseEntry> universe);
  std::optional<double> find(const std::string& stock_id, Date date) const;
  double at(const std::string& stock_id, Date date) const;

 private:
  std::map<std::pair<Date, std::string>, double> returns_;
};

struct InstanceOptions {
  int window_days = 7;
  std::size_t max_len = 128;
  ArchKind arch = ArchKind::kDecoder;
};

/// Concatenates the stock's news in [t - W, t) oldest first, SEP-separated,
/// keeps the most recent tokens that fit, and applies the arch's specials.
/// Returns nullopt when the window holds no news.
std::optional<Instance> build_instance(const std::string& stock_id, Date date, const ReturnTable& returns,
                                       const NewsIndex& news, const Vocabulary& vocab,
                                       const InstanceOptions& options);

/// One instance per universe entry with news, ordered by (date, stock_id).
std::vector<Instance> build_instances(std::span<const UniverseEntry> universe, const NewsIndex& news,
                                      const Vocabulary& vocab, const InstanceOptions& options);

struct DatasetSplit {
  std::vector<Instance> train;
  std::vector<Instance> validation;
  std::vector<Instance> test;
  Date train_end;
  Date val_end;
  std::vector<std::string> warnings;
};

/// train: date <= train_end; validation: train_end < date <= val_end; test: later.
DatasetSplit split_dataset(std::vector<Instance> instances, Date train_end, Date val_end);
std::string split_manifest_json(const DatasetSplit& split);

}  // namespace newsret
