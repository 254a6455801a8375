// SPDX-License-Identifier: Apache-2.0
#include "newsret/text_corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "newsret/error.hpp"

namespace newsret {
namespace {

constexpr std::array<const char*, 6> kReserved = {"<pad>", "<bos>", "<eos>", "<mask>", "<sep>", "<unk>"};

std::string lowercase(std::string_view word) {
  std::string out(word);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

template <typename Fn>
void for_each_word(std::string_view text, Fn&& fn) {
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) fn(text.substr(start, i - start));
  }
}

// Word lists for the synthetic newsflow. Sentiment words carry no return
// signal; the planted signal tokens come from the SignalSpec.
constexpr std::array<const char*, 10> kEvents = {"earnings", "revenue", "guidance", "dividend", "merger",
                                                 "product",  "contract", "outlook", "margin",   "costs"};
constexpr std::array<const char*, 6> kVerbs = {"rose", "fell", "moved", "traded", "climbed", "slipped"};
constexpr std::array<const char*, 10> kSentiment = {"strong", "weak",  "good",   "bad",   "robust",
                                                    "poor",   "solid", "gloomy", "upbeat", "dismal"};
constexpr std::array<const char*, 24> kFunctionWords = {
    "shares", "after", "report", "analysts", "expect", "from", "this", "quarter",
    "said",   "was",   "in",     "the",      "market", "as",   "posted", "amid",
    "news",   "of",    "and",    "with",     "for",    "company", "update", "on"};

std::string make_item(std::mt19937_64& rng, const std::string& ticker) {
  auto pick = [&rng](const auto& list) -> std::string {
    std::uniform_int_distribution<std::size_t> d(0, list.size() - 1);
    return list[d(rng)];
  };
  std::uniform_int_distribution<int> which(0, 3);
  switch (which(rng)) {
    case 0:
      return ticker + " shares " + pick(kVerbs) + " after " + pick(kSentiment) + " " + pick(kEvents) + " report";
    case 1:
      return "analysts expect " + pick(kSentiment) + " " + pick(kEvents) + " from " + ticker + " this quarter";
    case 2:
      return ticker + " said " + pick(kEvents) + " was " + pick(kSentiment) + " in the quarter";
    default:
      return "the market " + pick(kVerbs) + " as " + ticker + " posted " + pick(kSentiment) + " " + pick(kEvents);
  }
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const char* w : kReserved) add(w);
}

TokenId Vocabulary::add(std::string_view word) {
  std::string key = lowercase(word);
  if (key.empty()) fail(ErrorCode::kContract, "empty vocabulary word");
  if (auto it = ids_.find(key); it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(words_.size());
  words_.push_back(key);
  ids_.emplace(std::move(key), id);
  return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view word) const {
  if (auto it = ids_.find(lowercase(word)); it != ids_.end()) return it->second;
  return std::nullopt;
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    fail(ErrorCode::kLookup, "token id " + std::to_string(id) + " outside vocabulary");
  }
  return words_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::to_json() const {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < words_.size(); ++i) doc[words_[i]] = i;
  return doc.dump(1);
}

Vocabulary Vocabulary::from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("vocabulary: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorCode::kParse, "vocabulary must be a JSON object");
  std::vector<std::string> by_id(doc.size());
  for (const auto& [word, id] : doc.items()) {
    if (!id.is_number_integer()) fail(ErrorCode::kParse, "vocabulary id for '" + word + "' is not an integer");
    const auto i = id.get<std::int64_t>();
    if (i < 0 || static_cast<std::size_t>(i) >= by_id.size() || !by_id[static_cast<std::size_t>(i)].empty()) {
      fail(ErrorCode::kData, "vocabulary ids must be a bijection onto 0..n-1");
    }
    if (lowercase(word) != word) fail(ErrorCode::kData, "vocabulary word '" + word + "' is not lowercase");
    by_id[static_cast<std::size_t>(i)] = word;
  }
  for (std::size_t i = 0; i < kReserved.size(); ++i) {
    if (i >= by_id.size() || by_id[i] != kReserved[i]) {
      fail(ErrorCode::kData, std::string("vocabulary must reserve ") + kReserved[i] + " at id " + std::to_string(i));
    }
  }
  Vocabulary vocab;
  for (std::size_t i = kReserved.size(); i < by_id.size(); ++i) vocab.add(by_id[i]);
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << to_json() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kDependency, "missing vocabulary file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenSequence ids;
  for_each_word(text, [&](std::string_view w) { ids.push_back(vocab.find(w).value_or(tokens::kUnk)); });
  return ids;
}

std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.word(ids[i]);
  }
  return out;
}

std::size_t count_word(std::string_view text, std::string_view word) {
  const std::string key = lowercase(word);
  std::size_t n = 0;
  for_each_word(text, [&](std::string_view w) { n += lowercase(w) == key ? 1 : 0; });
  return n;
}

std::vector<Date> rebalance_dates(const UniverseSpec& spec) {
  std::vector<Date> dates;
  const Date first = spec.first_date.month_end();
  for (std::size_t k = 0; k < spec.n_periods; ++k) dates.push_back(first.add_month_ends(static_cast<int>(k)));
  return dates;
}

SyntheticData generate_synthetic(const UniverseSpec& universe, const SignalSpec& signal, std::uint64_t seed) {
  if (universe.n_stocks < 10) fail(ErrorCode::kPrecondition, "synthetic universe needs at least 10 stocks");
  if (universe.n_periods == 0) fail(ErrorCode::kPrecondition, "synthetic date range is empty");
  if (universe.window_days <= 0) fail(ErrorCode::kConfig, "look-back window must be positive");
  if (universe.min_news < 1 || universe.max_news < universe.min_news) {
    fail(ErrorCode::kConfig, "news count range must satisfy 1 <= min <= max");
  }
  if (signal.noise_sigma < 0.0) fail(ErrorCode::kConfig, "noise sigma must be non-negative");

  SyntheticData out;
  std::vector<std::string> tickers;
  for (std::size_t s = 0; s < universe.n_stocks; ++s) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "stk%03zu", s);
    tickers.emplace_back(buf);
  }
  for (const auto& t : tickers) out.vocab.add(t);
  for (const char* w : kFunctionWords) out.vocab.add(w);
  for (const char* w : kVerbs) out.vocab.add(w);
  for (const char* w : kEvents) out.vocab.add(w);
  for (const char* w : kSentiment) {
    out.vocab.add(w);
    out.sentiment_words.emplace_back(w);
  }
  std::vector<std::string> signal_words;
  for (const auto& [word, beta] : signal.effects) {
    const std::string key = lowercase(word);
    if (key.find_first_of(" \t\r\n") != std::string::npos) fail(ErrorCode::kConfig, "signal token contains whitespace");
    if (auto id = out.vocab.find(key); id && Vocabulary::is_special(*id)) {
      fail(ErrorCode::kConfig, "signal token '" + word + "' collides with a reserved token");
    }
    if (std::find(out.sentiment_words.begin(), out.sentiment_words.end(), key) != out.sentiment_words.end()) {
      fail(ErrorCode::kConfig, "signal token '" + word + "' collides with a sentiment word");
    }
    out.vocab.add(key);
    signal_words.push_back(key);
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> news_count(universe.min_news, universe.max_news);
  const std::int64_t window_seconds = std::int64_t{universe.window_days} * 86400;
  std::uniform_int_distribution<std::int64_t> offset(1, window_seconds);
  std::bernoulli_distribution carries(universe.signal_probability);
  std::normal_distribution<double> noise(0.0, 1.0);

  for (const Date& date : rebalance_dates(universe)) {
    const auto t = Timestamp::at_midnight(date).time();
    for (const auto& ticker : tickers) {
      const int n = news_count(rng);
      std::vector<std::size_t> counts(signal_words.size(), 0);
      for (int k = 0; k < n; ++k) {
        std::string text = make_item(rng, ticker);
        for (std::size_t j = 0; j < signal_words.size(); ++j) {
          if (carries(rng)) {
            text += " amid " + signal_words[j];
            ++counts[j];
          }
        }
        out.news.push_back({ticker, Timestamp(t - std::chrono::seconds{offset(rng)}), std::move(text)});
      }
      double ret = signal.base_return;
      for (std::size_t j = 0; j < signal_words.size(); ++j) {
        ret += signal.effects.at(signal_words[j]) * static_cast<double>(counts[j]);
      }
      const double eps = noise(rng);
      if (signal.noise_sigma > 0.0) ret += signal.noise_sigma * eps;
      out.universe.push_back({date, ticker, ret});
    }
  }
  return out;
}

std::string format_decimal(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) fail(ErrorCode::kNumeric, "cannot format value");
  return std::string(buf, ptr);
}

void write_news_jsonl(const std::filesystem::path& path, std::span<const NewsItem> news) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& item : news) {
    nlohmann::ordered_json line = {{"stock_id", item.stock_id},
                                   {"timestamp", item.timestamp.to_string()},
                                   {"text", item.text}};
    out << line.dump() << '\n';
  }
}

void write_universe_csv(const std::filesystem::path& path, std::span<const UniverseEntry> universe) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << "date,stock_id,forward_return\n";
  for (const auto& e : universe) {
    out << e.date.to_string() << ',' << e.stock_id << ',' << format_decimal(e.forward_return) << '\n';
  }
}

}  // namespace newsret
