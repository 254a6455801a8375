// SPDX-License-Identifier: Apache-2.0
#include "newsret/date.hpp"

#include <charconv>
#include <cstdio>

#include "newsret/error.hpp"

namespace newsret {
namespace {

int parse_digits(std::string_view text, std::size_t pos, std::size_t width, std::string_view whole) {
  if (pos + width > text.size()) fail(ErrorCode::kParse, "truncated date/time '" + std::string(whole) + "'");
  int value = 0;
  const char* first = text.data() + pos;
  auto [ptr, ec] = std::from_chars(first, first + width, value);
  if (ec != std::errc() || ptr != first + width) {
    fail(ErrorCode::kParse, "invalid date/time '" + std::string(whole) + "'");
  }
  return value;
}

std::chrono::year_month_day parse_ymd(std::string_view text) {
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') {
    fail(ErrorCode::kParse, "expected YYYY-MM-DD, got '" + std::string(text) + "'");
  }
  const std::chrono::year_month_day ymd{
      std::chrono::year{parse_digits(text, 0, 4, text)},
      std::chrono::month{static_cast<unsigned>(parse_digits(text, 5, 2, text))},
      std::chrono::day{static_cast<unsigned>(parse_digits(text, 8, 2, text))}};
  if (!ymd.ok()) fail(ErrorCode::kParse, "invalid calendar date '" + std::string(text) + "'");
  return ymd;
}

}  // namespace

Date::Date(int year, unsigned month, unsigned day) {
  const std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                                        std::chrono::day{day}};
  if (!ymd.ok()) fail(ErrorCode::kParse, "invalid calendar date");
  days_ = ymd;
}

Date Date::parse(std::string_view text) {
  if (text.size() != 10) fail(ErrorCode::kParse, "expected YYYY-MM-DD, got '" + std::string(text) + "'");
  return Date(std::chrono::sys_days(parse_ymd(text)));
}

std::string Date::to_string() const {
  const std::chrono::year_month_day ymd{days_};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

Date Date::month_end() const {
  const std::chrono::year_month_day ymd{days_};
  return Date(std::chrono::sys_days(std::chrono::year_month_day_last{
      ymd.year(), std::chrono::month_day_last{ymd.month()}}));
}

Date Date::add_month_ends(int months) const {
  const std::chrono::year_month_day ymd{days_};
  const auto ym = std::chrono::year_month{ymd.year(), ymd.month()} + std::chrono::months{months};
  return Date(std::chrono::sys_days(
      std::chrono::year_month_day_last{ym.year(), std::chrono::month_day_last{ym.month()}}));
}

Timestamp Timestamp::parse(std::string_view text) {
  const auto ymd = parse_ymd(text);
  std::chrono::sys_seconds t{std::chrono::sys_days(ymd)};
  if (text.size() == 10) return Timestamp(t);
  if (text[10] != 'T' && text[10] != ' ') {
    fail(ErrorCode::kParse, "invalid timestamp '" + std::string(text) + "'");
  }
  if (text.size() < 19 || text[13] != ':' || text[16] != ':') {
    fail(ErrorCode::kParse, "expected HH:MM:SS in '" + std::string(text) + "'");
  }
  const int hh = parse_digits(text, 11, 2, text);
  const int mm = parse_digits(text, 14, 2, text);
  const int ss = parse_digits(text, 17, 2, text);
  if (hh > 23 || mm > 59 || ss > 60) fail(ErrorCode::kParse, "invalid time of day in '" + std::string(text) + "'");
  t += std::chrono::hours{hh} + std::chrono::minutes{mm} + std::chrono::seconds{ss};
  std::string_view zone = text.substr(19);
  if (!zone.empty() && zone.front() == '.') {
    std::size_t n = 1;
    while (n < zone.size() && zone[n] >= '0' && zone[n] <= '9') ++n;
    zone.remove_prefix(n);
  }
  if (zone.empty() || zone == "Z") return Timestamp(t);
  if (zone.size() == 6 && (zone[0] == '+' || zone[0] == '-') && zone[3] == ':') {
    const int oh = parse_digits(zone, 1, 2, text);
    const int om = parse_digits(zone, 4, 2, text);
    const auto offset = std::chrono::hours{oh} + std::chrono::minutes{om};
    return Timestamp(zone[0] == '+' ? t - offset : t + offset);
  }
  fail(ErrorCode::kParse, "invalid zone designator in '" + std::string(text) + "'");
}

std::string Timestamp::to_string() const {
  const auto day = std::chrono::floor<std::chrono::days>(t_);
  const std::chrono::hh_mm_ss hms{t_ - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%sT%02d:%02d:%02dZ", Date(day).to_string().c_str(),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

}  // namespace newsret
