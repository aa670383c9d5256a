#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include "blitzeval/error.hpp"

namespace blitzeval {

// Local civil time as seconds since 1970-01-01T00:00:00 (no time zone, no DST).
struct DateTime {
  std::int64_t seconds = 0;

  static constexpr std::int64_t kDay = 86400;

  std::int64_t days() const { return seconds >= 0 ? seconds / kDay : -((-seconds + kDay - 1) / kDay); }
  std::int64_t second_of_day() const { return seconds - days() * kDay; }
  auto operator<=>(const DateTime&) const = default;
};

// Days since 1970-01-01 for a proleptic Gregorian date.
inline std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
  using namespace std::chrono;
  return sys_days{year{y} / month{m} / day{d}}.time_since_epoch().count();
}

inline bool valid_civil(int y, unsigned m, unsigned d) {
  using namespace std::chrono;
  return year_month_day{year{y}, month{m}, day{d}}.ok();
}

// 0 = Sunday ... 6 = Saturday.
inline int weekday_of(std::int64_t days_since_epoch) {
  using namespace std::chrono;
  return static_cast<int>(weekday{sys_days{std::chrono::days{days_since_epoch}}}.c_encoding());
}

inline std::string format_date(std::int64_t days_since_epoch) {
  using namespace std::chrono;
  year_month_day ymd{sys_days{std::chrono::days{days_since_epoch}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

inline std::string format_datetime(DateTime t) {
  std::int64_t sod = t.second_of_day();
  char buf[16];
  std::snprintf(buf, sizeof buf, "T%02d:%02d:%02d", static_cast<int>(sod / 3600), static_cast<int>(sod / 60 % 60),
                static_cast<int>(sod % 60));
  return format_date(t.days()) + buf;
}

// YYYY-MM-DD
inline std::optional<std::int64_t> parse_date(std::string_view s) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  std::string tmp(s);
  if (std::sscanf(tmp.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3) return std::nullopt;
  if (!valid_civil(y, m, d)) return std::nullopt;
  return days_from_civil(y, m, d);
}

// YYYY-MM-DDTHH:MM:SS (a space is accepted in place of T; seconds optional).
inline std::optional<DateTime> parse_datetime(std::string_view s) {
  std::string tmp(s);
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  char sep = 0, tail = 0;
  int n = std::sscanf(tmp.c_str(), "%4d-%2u-%2u%c%2u:%2u:%2u%c", &y, &mo, &d, &sep, &h, &mi, &sec, &tail);
  if (n == 6) {
    sec = 0;
  } else if (n != 7) {
    return std::nullopt;
  }
  if (sep != 'T' && sep != ' ') return std::nullopt;
  if (!valid_civil(y, mo, d) || h > 23 || mi > 59 || sec > 59) return std::nullopt;
  return DateTime{days_from_civil(y, mo, d) * DateTime::kDay + h * 3600 + mi * 60 + sec};
}

inline DateTime make_datetime(int y, unsigned m, unsigned d, unsigned h = 0, unsigned mi = 0, unsigned s = 0) {
  if (!valid_civil(y, m, d) || h > 23 || mi > 59 || s > 59) throw InvalidParameter("invalid calendar datetime");
  return DateTime{days_from_civil(y, m, d) * DateTime::kDay + h * 3600 + mi * 60 + s};
}

}  // namespace blitzeval
