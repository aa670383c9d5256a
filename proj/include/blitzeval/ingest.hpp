#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "blitzeval/calendar.hpp"
#include "blitzeval/error.hpp"
#include "blitzeval/geo.hpp"
#include "blitzeval/hexgrid.hpp"

namespace blitzeval {

inline constexpr int kPeriodsPerDay = 4;
inline constexpr double kHoursCap = 6.0;
inline constexpr std::int64_t kHalfHour = 1800;
inline constexpr std::int64_t kPeriodSeconds = 6 * 3600;

enum class CrimeKind { Murder, Robbery };
enum class BlitzType { Fixed, Mobile };
enum class Period : int { Dawn = 0, Morning = 1, Afternoon = 2, Night = 3 };

inline const char* to_string(Period p) {
  switch (p) {
    case Period::Dawn: return "dawn";
    case Period::Morning: return "morning";
    case Period::Afternoon: return "afternoon";
    case Period::Night: return "night";
  }
  return "?";
}

struct CrimeEvent {
  CrimeKind kind = CrimeKind::Robbery;
  GeoPoint location;
  DateTime timestamp;
  std::size_t line = 0;  // 1-based data row in the source file, 0 if not from a file
};

struct BlitzRecord {
  GeoPoint location;
  DateTime start;
  DateTime end;
  int officers = 0;
  int police_vehicles = 0;
  BlitzType blitz_type = BlitzType::Fixed;
  int vehicles_stopped = 0;
  int tickets = 0;
  int seizures = 0;
  bool weapons_found = false;
  bool drugs_found = false;
  std::size_t line = 0;
};

struct PeriodIndex {
  int day_ordinal = 0;
  Period period = Period::Dawn;

  // Flattened day-period index dt = 4 * day + period.
  int flat() const { return day_ordinal * kPeriodsPerDay + static_cast<int>(period); }
  auto operator<=>(const PeriodIndex&) const = default;
};

// [start_day, start_day + n_days) in days since the epoch.
struct StudyWindow {
  std::int64_t start_day = 0;
  int n_days = 0;

  std::int64_t start_seconds() const { return start_day * DateTime::kDay; }
  std::int64_t end_seconds() const { return (start_day + n_days) * DateTime::kDay; }
  bool contains(DateTime t) const { return t.seconds >= start_seconds() && t.seconds < end_seconds(); }
};

// Day ordinal relative to the window start; not range checked.
inline PeriodIndex slot_of(DateTime t, const StudyWindow& w) {
  const std::int64_t rel = t.seconds - w.start_seconds();
  const std::int64_t day = rel >= 0 ? rel / DateTime::kDay : -((-rel + DateTime::kDay - 1) / DateTime::kDay);
  const std::int64_t sod = rel - day * DateTime::kDay;
  return {static_cast<int>(day), static_cast<Period>(sod / kPeriodSeconds)};
}

// Dawn [00:00,06:00), Morning [06:00,12:00), Afternoon [12:00,18:00), Night [18:00,24:00).
inline PeriodIndex period_of(DateTime t, const StudyWindow& w) {
  if (!w.contains(t)) throw OutOfWindow("timestamp " + format_datetime(t) + " outside study window");
  return slot_of(t, w);
}

struct SlotHours {
  PeriodIndex slot;  // may fall outside the window for blitzes that straddle its edges
  double hours = 0.0;
};

// Snaps the blitz onto the half-open 30-minute wall-clock intervals it
// touches and credits 0.5 h per interval to the period holding the interval
// start. Output is chronological with one entry per distinct period.
inline std::vector<SlotHours> apportion_blitz_hours(const BlitzRecord& b, const StudyWindow& w) {
  if (b.end <= b.start) throw InvalidRecord("blitz end is not after start");
  if (b.end.seconds - b.start.seconds > DateTime::kDay) throw InvalidRecord("blitz longer than 24 hours");
  auto floor_div = [](std::int64_t a, std::int64_t d) { return a >= 0 ? a / d : -((-a + d - 1) / d); };
  const std::int64_t first = floor_div(b.start.seconds, kHalfHour);
  const std::int64_t last = -floor_div(-b.end.seconds, kHalfHour);  // ceil
  std::vector<SlotHours> out;
  for (std::int64_t k = first; k < last; ++k) {
    PeriodIndex s = slot_of(DateTime{k * kHalfHour}, w);
    if (out.empty() || out.back().slot != s) out.push_back({s, 0.0});
    out.back().hours += 0.5;
  }
  return out;
}

enum class DropReason { OutsideGrid, OutsideWindow, Malformed };

inline const char* to_string(DropReason r) {
  switch (r) {
    case DropReason::OutsideGrid: return "outside_grid";
    case DropReason::OutsideWindow: return "outside_window";
    case DropReason::Malformed: return "malformed";
  }
  return "?";
}

struct DropRecord {
  std::string source;  // "crime" or "blitz"
  std::size_t record = 0;
  DropReason reason = DropReason::Malformed;
  std::string detail;
};

struct CellPeriodAggregate {
  int cell = 0;
  PeriodIndex slot;
  int murders = 0;
  int robberies = 0;
  int violent_count = 0;
  double raw_hours = 0.0;    // before the cap
  double blitz_hours = 0.0;  // min(6, raw_hours)
  int n_blitzes = 0;
  // Blitz-level characteristics, attached to every cell-period the blitz touches.
  int officers = 0;
  int police_vehicles = 0;
  int seizures = 0;
  int vehicles_stopped = 0;
  int tickets = 0;
  int mobile = 0;  // 1 if any mobile (motorcycle) blitz present
};

struct Aggregates {
  StudyWindow window;
  std::size_t n_cells = 0;
  // Sorted by (day, period, cell), the panel row order.
  std::vector<CellPeriodAggregate> rows;
  std::vector<DropRecord> drops;
  std::size_t crimes_in = 0;
  std::size_t blitzes_in = 0;

  long total_violent() const {
    long n = 0;
    for (const auto& r : rows) n += r.violent_count;
    return n;
  }
  std::size_t dropped(const std::string& source) const {
    return static_cast<std::size_t>(
        std::count_if(drops.begin(), drops.end(), [&](const DropRecord& d) { return d.source == source; }));
  }
};

inline Aggregates aggregate(const HexGrid& grid, const StudyWindow& window, const std::vector<CrimeEvent>& crimes,
                            const std::vector<BlitzRecord>& blitzes) {
  using Key = std::tuple<int, int, int>;  // day, period, cell
  std::map<Key, CellPeriodAggregate> acc;
  Aggregates out;
  out.window = window;
  out.n_cells = grid.size();
  out.crimes_in = crimes.size();
  out.blitzes_in = blitzes.size();

  auto entry = [&](int cell, PeriodIndex s) -> CellPeriodAggregate& {
    auto [it, fresh] = acc.try_emplace(Key{s.day_ordinal, static_cast<int>(s.period), cell});
    if (fresh) {
      it->second.cell = cell;
      it->second.slot = s;
    }
    return it->second;
  };

  for (std::size_t i = 0; i < crimes.size(); ++i) {
    const auto& c = crimes[i];
    const std::size_t rec = c.line ? c.line : i + 1;
    if (!c.location.valid()) {
      out.drops.push_back({"crime", rec, DropReason::Malformed, "invalid coordinates"});
      continue;
    }
    if (!window.contains(c.timestamp)) {
      out.drops.push_back({"crime", rec, DropReason::OutsideWindow, format_datetime(c.timestamp)});
      continue;
    }
    auto cell = locate(grid, c.location);
    if (!cell) {
      out.drops.push_back({"crime", rec, DropReason::OutsideGrid, ""});
      continue;
    }
    auto& e = entry(*cell, slot_of(c.timestamp, window));
    (c.kind == CrimeKind::Murder ? e.murders : e.robberies) += 1;
    e.violent_count += 1;
  }

  for (std::size_t i = 0; i < blitzes.size(); ++i) {
    const auto& b = blitzes[i];
    const std::size_t rec = b.line ? b.line : i + 1;
    if (!b.location.valid()) {
      out.drops.push_back({"blitz", rec, DropReason::Malformed, "invalid coordinates"});
      continue;
    }
    std::vector<SlotHours> parts;
    try {
      parts = apportion_blitz_hours(b, window);
    } catch (const InvalidRecord& e) {
      out.drops.push_back({"blitz", rec, DropReason::Malformed, e.what()});
      continue;
    }
    std::erase_if(parts, [&](const SlotHours& p) { return p.slot.day_ordinal < 0 || p.slot.day_ordinal >= window.n_days; });
    if (parts.empty()) {
      out.drops.push_back({"blitz", rec, DropReason::OutsideWindow, format_datetime(b.start)});
      continue;
    }
    auto cell = locate(grid, b.location);
    if (!cell) {
      out.drops.push_back({"blitz", rec, DropReason::OutsideGrid, ""});
      continue;
    }
    for (const auto& p : parts) {
      auto& e = entry(*cell, p.slot);
      e.raw_hours += p.hours;
      e.n_blitzes += 1;
      e.officers += b.officers;
      e.police_vehicles += b.police_vehicles;
      e.seizures += b.seizures;
      e.vehicles_stopped += b.vehicles_stopped;
      e.tickets += b.tickets;
      if (b.blitz_type == BlitzType::Mobile) e.mobile = 1;
    }
  }

  out.rows.reserve(acc.size());
  for (auto& [k, v] : acc) {
    v.blitz_hours = std::min(kHoursCap, v.raw_hours);
    out.rows.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace csv {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

inline std::optional<double> to_double(std::string_view s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<int> to_int(std::string_view s) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string lower(std::string_view s) {
  std::string o(s);
  for (auto& ch : o) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return o;
}

// Maps header names to positions; throws if a required column is missing.
inline std::unordered_map<std::string, std::size_t> header_index(const std::string& header_line,
                                                                 const std::vector<std::string>& required) {
  std::unordered_map<std::string, std::size_t> idx;
  auto cols = split(header_line);
  for (std::size_t i = 0; i < cols.size(); ++i) idx[lower(cols[i])] = i;
  for (const auto& r : required)
    if (!idx.count(r)) throw InvalidRecord("CSV header is missing column '" + r + "'");
  return idx;
}

// First line that is neither blank nor a `#` comment.
inline bool read_header(std::istream& in, std::string& line) {
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (!t.empty() && t.front() != '#') return true;
  }
  return false;
}

}  // namespace csv

inline std::vector<CrimeEvent> read_crimes_csv(std::istream& in, std::vector<DropRecord>& drops) {
  std::vector<CrimeEvent> out;
  std::string line;
  if (!csv::read_header(in, line)) return out;
  auto idx = csv::header_index(line, {"kind", "lat", "lon", "timestamp"});
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (csv::trim(line).empty()) continue;
    ++row;
    auto f = csv::split(line);
    auto field = [&](const char* k) -> std::string_view { return idx[k] < f.size() ? f[idx[k]] : std::string_view{}; };
    CrimeEvent c;
    c.line = row;
    std::string kind = csv::lower(field("kind"));
    auto lat = csv::to_double(field("lat"));
    auto lon = csv::to_double(field("lon"));
    auto ts = parse_datetime(field("timestamp"));
    if ((kind != "murder" && kind != "robbery") || !lat || !lon || !ts || !GeoPoint{*lat, *lon}.valid()) {
      drops.push_back({"crime", row, DropReason::Malformed, std::string(line)});
      continue;
    }
    c.kind = kind == "murder" ? CrimeKind::Murder : CrimeKind::Robbery;
    c.location = {*lat, *lon};
    c.timestamp = *ts;
    out.push_back(c);
  }
  return out;
}

inline std::vector<BlitzRecord> read_blitzes_csv(std::istream& in, std::vector<DropRecord>& drops) {
  std::vector<BlitzRecord> out;
  std::string line;
  if (!csv::read_header(in, line)) return out;
  auto idx = csv::header_index(line, {"lat", "lon", "start", "end", "officers", "vehicles", "type", "stopped",
                                      "tickets", "seizures", "weapons", "drugs"});
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (csv::trim(line).empty()) continue;
    ++row;
    auto f = csv::split(line);
    auto field = [&](const char* k) -> std::string_view { return idx[k] < f.size() ? f[idx[k]] : std::string_view{}; };
    auto lat = csv::to_double(field("lat"));
    auto lon = csv::to_double(field("lon"));
    auto start = parse_datetime(field("start"));
    auto end = parse_datetime(field("end"));
    auto officers = csv::to_int(field("officers"));
    auto vehicles = csv::to_int(field("vehicles"));
    std::string type = csv::lower(field("type"));
    auto stopped = csv::to_int(field("stopped"));
    auto tickets = csv::to_int(field("tickets"));
    auto seizures = csv::to_int(field("seizures"));
    auto weapons = csv::to_int(field("weapons"));
    auto drugs = csv::to_int(field("drugs"));
    bool ok = lat && lon && start && end && officers && vehicles && stopped && tickets && seizures && weapons &&
              drugs && (type == "fixed" || type == "mobile") && GeoPoint{*lat, *lon}.valid() && *officers >= 0 &&
              *vehicles >= 0 && *stopped >= 0 && *tickets >= 0 && *seizures >= 0 && (*weapons == 0 || *weapons == 1) &&
              (*drugs == 0 || *drugs == 1);
    if (!ok) {
      drops.push_back({"blitz", row, DropReason::Malformed, std::string(line)});
      continue;
    }
    BlitzRecord b;
    b.line = row;
    b.location = {*lat, *lon};
    b.start = *start;
    b.end = *end;
    b.officers = *officers;
    b.police_vehicles = *vehicles;
    b.blitz_type = type == "mobile" ? BlitzType::Mobile : BlitzType::Fixed;
    b.vehicles_stopped = *stopped;
    b.tickets = *tickets;
    b.seizures = *seizures;
    b.weapons_found = *weapons == 1;
    b.drugs_found = *drugs == 1;
    out.push_back(b);
  }
  return out;
}

inline void write_crimes_csv(std::ostream& out, const std::vector<CrimeEvent>& crimes) {
  out << "kind,lat,lon,timestamp\n";
  char buf[128];
  for (const auto& c : crimes) {
    std::snprintf(buf, sizeof buf, "%s,%.9f,%.9f,", c.kind == CrimeKind::Murder ? "murder" : "robbery",
                  c.location.lat, c.location.lon);
    out << buf << format_datetime(c.timestamp) << '\n';
  }
}

inline void write_blitzes_csv(std::ostream& out, const std::vector<BlitzRecord>& blitzes) {
  out << "lat,lon,start,end,officers,vehicles,type,stopped,tickets,seizures,weapons,drugs\n";
  char buf[160];
  for (const auto& b : blitzes) {
    std::snprintf(buf, sizeof buf, "%.9f,%.9f,", b.location.lat, b.location.lon);
    out << buf << format_datetime(b.start) << ',' << format_datetime(b.end);
    std::snprintf(buf, sizeof buf, ",%d,%d,%s,%d,%d,%d,%d,%d\n", b.officers, b.police_vehicles,
                  b.blitz_type == BlitzType::Mobile ? "mobile" : "fixed", b.vehicles_stopped, b.tickets, b.seizures,
                  b.weapons_found ? 1 : 0, b.drugs_found ? 1 : 0);
    out << buf;
  }
}

inline void write_drops_csv(std::ostream& out, const std::vector<DropRecord>& drops) {
  out << "source,record,reason\n";
  for (const auto& d : drops) out << d.source << ',' << d.record << ',' << to_string(d.reason) << '\n';
}

inline void write_aggregates_csv(std::ostream& out, const Aggregates& a) {
  out << "cell,day,period,violent,murders,robberies,raw_hours,blitz_hours,n_blitzes,officers,vehicles,seizures,"
         "stopped,tickets,mobile\n";
  char buf[256];
  for (const auto& r : a.rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%d,%d,%d,%.1f,%.1f,%d,%d,%d,%d,%d,%d,%d\n", r.cell, r.slot.day_ordinal,
                  static_cast<int>(r.slot.period), r.violent_count, r.murders, r.robberies, r.raw_hours, r.blitz_hours,
                  r.n_blitzes, r.officers, r.police_vehicles, r.seizures, r.vehicles_stopped, r.tickets, r.mobile);
    out << buf;
  }
}

}  // namespace blitzeval
