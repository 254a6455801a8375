// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "newsret/date.hpp"
#include "newsret/records.hpp"

namespace newsret {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

namespace tokens {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kMask = 3;
inline constexpr TokenId kSep = 4;
inline constexpr TokenId kUnk = 5;
/// Ids below this are structural and never count as content.
inline constexpr TokenId kFirstContent = 5;
}  // namespace tokens

class Vocabulary {
 public:
  /// Vocabulary holding only the reserved tokens and UNK.
  Vocabulary();

  /// Adds `word` (lowercased) if new; returns its id either way.
  TokenId add(std::string_view word);
  std::optional<TokenId> find(std::string_view word) const;
  const std::string& word(TokenId id) const;
  std::size_t size() const noexcept { return words_.size(); }
  static bool is_special(TokenId id) noexcept { return id >= 0 && id < tokens::kFirstContent; }

  /// JSON map {token: id}.
  std::string to_json() const;
  static Vocabulary from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Whitespace split, ASCII-lowercased, unknown words map to UNK.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab);
/// Space-joined words; the inverse of tokenize on in-vocabulary text.
std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab);

struct SignalSpec {
  std::map<std::string, double> effects;  // token -> return per occurrence
  double noise_sigma = 0.0;
  double base_return = 0.0;
};

struct UniverseSpec {
  std::size_t n_stocks = 40;
  Date first_date{2010, 1, 31};
  std::size_t n_periods = 96;  // monthly rebalance dates, month ends
  int window_days = 7;
  int min_news = 1;
  int max_news = 5;
  /// Per news item, probability of carrying each signal token.
  double signal_probability = 0.12;
};

struct SyntheticData {
  Vocabulary vocab;
  std::vector<NewsItem> news;
  std::vector<UniverseEntry> universe;
  std::vector<std::string> sentiment_words;
};

std::vector<Date> rebalance_dates(const UniverseSpec& spec);

/// Template-generated newsflow with a return signal that is linear in the
/// number of signal-token occurrences inside each look-back window.
SyntheticData generate_synthetic(const UniverseSpec& universe, const SignalSpec& signal,
                                 std::uint64_t seed);

/// Number of occurrences of `word` in `text` under the tokenizer's rules.
std::size_t count_word(std::string_view text, std::string_view word);

std::string format_decimal(double value);

void write_news_jsonl(const std::filesystem::path& path, std::span<const NewsItem> news);
void write_universe_csv(const std::filesystem::path& path, std::span<const UniverseEntry> universe);

}  // namespace newsret
