#pragma once

#include <charconv>
#include <chrono>
#include <compare>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tripgen {

/// Calendar month. Ordered, hashable through index().
struct YearMonth {
  int year = 1970;
  int month = 1;  // 1..12

  constexpr YearMonth() = default;
  constexpr YearMonth(int y, int m) : year(y), month(m) {
    if (m < 1 || m > 12) throw std::invalid_argument("month out of range: " + std::to_string(m));
  }

  /// Months since year 0; convenient for arithmetic and map keys.
  [[nodiscard]] constexpr int index() const { return year * 12 + (month - 1); }
  [[nodiscard]] static constexpr YearMonth from_index(int idx) {
    int y = idx >= 0 ? idx / 12 : -((-idx + 11) / 12);
    return {y, idx - y * 12 + 1};
  }

  /// Zero-based month of year, 0 = January.
  [[nodiscard]] constexpr int month_of_year() const { return month - 1; }

  [[nodiscard]] int days() const {
    using namespace std::chrono;
    auto last = year_month_day_last{std::chrono::year{year} / std::chrono::month{static_cast<unsigned>(month)} / last_spec{}};
    return static_cast<int>(static_cast<unsigned>(last.day()));
  }

  [[nodiscard]] constexpr YearMonth operator+(int months) const { return from_index(index() + months); }
  [[nodiscard]] constexpr YearMonth operator-(int months) const { return from_index(index() - months); }
  [[nodiscard]] constexpr int operator-(const YearMonth& other) const { return index() - other.index(); }

  constexpr auto operator<=>(const YearMonth&) const = default;

  [[nodiscard]] std::string to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
    return buf;
  }

  /// Parses "YYYY-MM" (a trailing "-DD" is tolerated and ignored).
  static YearMonth parse(std::string_view text) {
    auto fail = [&] { return std::invalid_argument("bad year-month '" + std::string(text) + "'"); };
    if (text.size() < 7 || text[4] != '-') throw fail();
    int y = 0, m = 0;
    if (std::from_chars(text.data(), text.data() + 4, y).ptr != text.data() + 4) throw fail();
    if (std::from_chars(text.data() + 5, text.data() + 7, m).ptr != text.data() + 7) throw fail();
    if (m < 1 || m > 12) throw fail();
    if (text.size() > 7 && text[7] != '-') throw fail();
    return {y, m};
  }

  static YearMonth of(std::chrono::sys_days day) {
    std::chrono::year_month_day ymd{day};
    return {static_cast<int>(ymd.year()), static_cast<int>(static_cast<unsigned>(ymd.month()))};
  }
};

}  // namespace tripgen

template <>
struct std::hash<tripgen::YearMonth> {
  std::size_t operator()(const tripgen::YearMonth& ym) const noexcept { return std::hash<int>{}(ym.index()); }
};
