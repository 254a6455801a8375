// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <compare>
#include <string>
#include <string_view>

namespace newsret {

/// Calendar date (UTC). As an instant it denotes midnight at the start of the day.
class Date {
 public:
  Date() = default;
  explicit Date(std::chrono::sys_days days) : days_(days) {}
  Date(int year, unsigned month, unsigned day);

  /// Parses "YYYY-MM-DD".
  static Date parse(std::string_view text);

  std::chrono::sys_days days() const noexcept { return days_; }
  std::string to_string() const;
  /// Last calendar day of the same month.
  Date month_end() const;
  /// Same position (month end) `months` later.
  Date add_month_ends(int months) const;

  auto operator<=>(const Date&) const = default;

 private:
  std::chrono::sys_days days_{};
};

/// UTC instant with second resolution.
class Timestamp {
 public:
  Timestamp() = default;
  explicit Timestamp(std::chrono::sys_seconds t) : t_(t) {}
  static Timestamp at_midnight(Date d) { return Timestamp(std::chrono::sys_seconds(d.days())); }

  /// Parses "YYYY-MM-DD", "YYYY-MM-DDTHH:MM:SS" with optional "Z" or "±HH:MM".
  static Timestamp parse(std::string_view text);

  std::chrono::sys_seconds time() const noexcept { return t_; }
  std::string to_string() const;

  auto operator<=>(const Timestamp&) const = default;

 private:
  std::chrono::sys_seconds t_{};
};

}  // namespace newsret
