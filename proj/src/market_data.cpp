// SPDX-License-Identifier: Apache-2.0
#include "newsret/market_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "newsret/error.hpp"

namespace newsret {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line);
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

}  // namespace

std::vector<NewsItem> parse_news_jsonl(std::istream& in, const std::string& source) {
  std::vector<NewsItem> news;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      fail(ErrorCode::kParse, where(source, line_no) + ": malformed JSON");
    }
    if (!doc.is_object()) fail(ErrorCode::kParse, where(source, line_no) + ": expected a JSON object");
    for (const char* key : {"stock_id", "timestamp", "text"}) {
      if (!doc.contains(key) || !doc[key].is_string()) {
        fail(ErrorCode::kParse, where(source, line_no) + ": missing or non-string '" + key + "'");
      }
    }
    NewsItem item;
    item.stock_id = doc["stock_id"].get<std::string>();
    if (item.stock_id.empty()) fail(ErrorCode::kParse, where(source, line_no) + ": empty stock_id");
    try {
      item.timestamp = Timestamp::parse(doc["timestamp"].get<std::string>());
    } catch (const Error& e) {
      fail(ErrorCode::kParse, where(source, line_no) + ": " + e.what());
    }
    item.text = doc["text"].get<std::string>();
    news.push_back(std::move(item));
  }
  std::stable_sort(news.begin(), news.end(), [](const NewsItem& a, const NewsItem& b) {
    if (a.stock_id != b.stock_id) return a.stock_id < b.stock_id;
    return a.timestamp < b.timestamp;
  });
  return news;
}

std::vector<NewsItem> load_news(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read news file " + path.string());
  return parse_news_jsonl(in, path.string());
}

std::vector<UniverseEntry> parse_universe_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != "date,stock_id,forward_return") {
    fail(ErrorCode::kParse, where(source, 1) + ": expected header date,stock_id,forward_return");
  }
  std::vector<UniverseEntry> entries;
  std::set<std::pair<Date, std::string>> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 3) fail(ErrorCode::kParse, where(source, line_no) + ": expected 3 fields");
    UniverseEntry e;
    try {
      e.date = Date::parse(fields[0]);
    } catch (const Error& err) {
      fail(ErrorCode::kParse, where(source, line_no) + ": " + err.what());
    }
    e.stock_id = std::string(fields[1]);
    if (e.stock_id.empty()) fail(ErrorCode::kParse, where(source, line_no) + ": empty stock_id");
    const std::string_view r = fields[2];
    auto [ptr, ec] = std::from_chars(r.data(), r.data() + r.size(), e.forward_return);
    if (r.empty() || ec != std::errc() || ptr != r.data() + r.size()) {
      fail(ErrorCode::kParse, where(source, line_no) + ": unparseable return '" + std::string(r) + "'");
    }
    if (!std::isfinite(e.forward_return)) fail(ErrorCode::kData, where(source, line_no) + ": non-finite return");
    if (!seen.emplace(e.date, e.stock_id).second) {
      fail(ErrorCode::kData, where(source, line_no) + ": duplicate entry (" + e.date.to_string() + ", " +
                                 e.stock_id + ")");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<UniverseEntry> load_universe(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read universe file " + path.string());
  return parse_universe_csv(in, path.string());
}

NewsIndex::NewsIndex(std::span<const NewsItem> news) {
  for (const auto& item : news) by_stock_[item.stock_id].push_back(item);
  for (auto& [id, items] : by_stock_) {
    std::stable_sort(items.begin(), items.end(),
                     [](const NewsItem& a, const NewsItem& b) { return a.timestamp < b.timestamp; });
  }
}

std::span<const NewsItem> NewsIndex::for_stock(const std::string& stock_id) const {
  if (auto it = by_stock_.find(stock_id); it != by_stock_.end()) return it->second;
  return {};
}

ReturnTable::ReturnTable(std::span<const UniverseEntry> universe) {
  for (const auto& e : universe) {
    if (!returns_.emplace(std::make_pair(e.date, e.stock_id), e.forward_return).second) {
      fail(ErrorCode::kData, "duplicate universe entry (" + e.date.to_string() + ", " + e.stock_id + ")");
    }
  }
}

std::optional<double> ReturnTable::find(const std::string& stock_id, Date date) const {
  if (auto it = returns_.find({date, stock_id}); it != returns_.end()) return it->second;
  return std::nullopt;
}

double ReturnTable::at(const std::string& stock_id, Date date) const {
  if (auto r = find(stock_id, date)) return *r;
  fail(ErrorCode::kLookup, "no universe entry for (" + date.to_string() + ", " + stock_id + ")");
}

std::optional<Instance> build_instance(const std::string& stock_id, Date date, const ReturnTable& returns,
                                       const NewsIndex& news, const Vocabulary& vocab,
                                       const InstanceOptions& options) {
  const double label = returns.at(stock_id, date);
  if (options.window_days <= 0) fail(ErrorCode::kConfig, "look-back window must be positive");
  const bool decoder = options.arch == ArchKind::kDecoder;
  const std::size_t specials = decoder ? 2 : 1;
  if (options.max_len <= specials) fail(ErrorCode::kConfig, "max_len leaves no room for content");

  const auto end = Timestamp::at_midnight(date).time();
  const auto begin = end - std::chrono::days{options.window_days};
  TokenSequence content;
  bool any = false;
  for (const NewsItem& item : news.for_stock(stock_id)) {
    const auto ts = item.timestamp.time();
    if (ts < begin || ts >= end) continue;
    if (any) content.push_back(tokens::kSep);
    const TokenSequence ids = tokenize(item.text, vocab);
    content.insert(content.end(), ids.begin(), ids.end());
    any = true;
  }
  if (!any) return std::nullopt;

  const std::size_t budget = options.max_len - specials;
  const std::size_t keep = std::min(budget, content.size());
  Instance inst;
  inst.stock_id = stock_id;
  inst.date = date;
  inst.label = label;
  if (decoder) inst.sequence.push_back(tokens::kBos);
  inst.sequence.insert(inst.sequence.end(), content.end() - static_cast<std::ptrdiff_t>(keep), content.end());
  inst.sequence.push_back(sequence_end_token(options.arch));
  return inst;
}

std::vector<Instance> build_instances(std::span<const UniverseEntry> universe, const NewsIndex& news,
                                      const Vocabulary& vocab, const InstanceOptions& options) {
  const ReturnTable returns(universe);
  std::vector<const UniverseEntry*> order;
  for (const auto& e : universe) order.push_back(&e);
  std::sort(order.begin(), order.end(), [](const UniverseEntry* a, const UniverseEntry* b) {
    return a->date != b->date ? a->date < b->date : a->stock_id < b->stock_id;
  });
  std::vector<Instance> out;
  for (const UniverseEntry* e : order) {
    if (auto inst = build_instance(e->stock_id, e->date, returns, news, vocab, options)) {
      out.push_back(std::move(*inst));
    }
  }
  return out;
}

DatasetSplit split_dataset(std::vector<Instance> instances, Date train_end, Date val_end) {
  if (!(train_end < val_end)) fail(ErrorCode::kConfig, "split: train_end must precede val_end");
  DatasetSplit split;
  split.train_end = train_end;
  split.val_end = val_end;
  for (auto& inst : instances) {
    if (inst.date <= train_end) {
      split.train.push_back(std::move(inst));
    } else if (inst.date <= val_end) {
      split.validation.push_back(std::move(inst));
    } else {
      split.test.push_back(std::move(inst));
    }
  }
  if (split.test.empty()) split.warnings.emplace_back("test partition is empty");
  if (split.validation.empty()) split.warnings.emplace_back("validation partition is empty");
  return split;
}

std::string split_manifest_json(const DatasetSplit& split) {
  nlohmann::ordered_json doc = {
      {"train_end", split.train_end.to_string()},
      {"val_end", split.val_end.to_string()},
      {"counts",
       {{"train", split.train.size()}, {"validation", split.validation.size()}, {"test", split.test.size()}}},
      {"warnings", split.warnings}};
  return doc.dump(2);
}

}  // namespace newsret
