#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "blitzeval/calendar.hpp"
#include "blitzeval/error.hpp"
#include "blitzeval/ingest.hpp"
#include "blitzeval/weights.hpp"

namespace blitzeval {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

// Balanced cell x day x period panel. Row layout:
//   row = (day * 4 + period) * n_cells + cell
// The outcome `crime` is integer-typed; every other column is double with
// NaN marking rows that have no value (e.g. the head of a temporal lag).
class Panel {
 public:
  Panel() = default;
  Panel(std::size_t n_cells, int n_days, std::int64_t study_start_day)
      : n_cells_(n_cells), n_days_(n_days), start_day_(study_start_day) {
    if (n_days <= 0) throw InvalidParameter("panel needs at least one day");
    crime_.assign(n_rows(), 0);
  }

  std::size_t n_cells() const { return n_cells_; }
  int n_days() const { return n_days_; }
  int n_periods() const { return kPeriodsPerDay; }
  std::size_t n_slots() const { return static_cast<std::size_t>(n_days_) * kPeriodsPerDay; }
  std::size_t n_rows() const { return n_cells_ * n_slots(); }
  std::int64_t study_start_day() const { return start_day_; }
  int start_weekday() const { return weekday_of(start_day_); }

  std::size_t row(std::size_t cell, int day, int period) const {
    return (static_cast<std::size_t>(day) * kPeriodsPerDay + static_cast<std::size_t>(period)) * n_cells_ + cell;
  }
  int cell_of(std::size_t row) const { return static_cast<int>(row % n_cells_); }
  int slot_of(std::size_t row) const { return static_cast<int>(row / n_cells_); }
  int day_of(std::size_t row) const { return slot_of(row) / kPeriodsPerDay; }
  int period_of(std::size_t row) const { return slot_of(row) % kPeriodsPerDay; }
  int dow_of(std::size_t row) const { return (start_weekday() + day_of(row)) % 7; }
  // cell x period x day-of-week, in [0, n_cells * 28).
  int group_a(std::size_t row) const { return (cell_of(row) * kPeriodsPerDay + period_of(row)) * 7 + dow_of(row); }
  int group_b(std::size_t row) const { return day_of(row); }

  std::vector<std::int32_t>& crime() { return crime_; }
  const std::vector<std::int32_t>& crime() const { return crime_; }

  bool has(const std::string& name) const {
    if (name == "crime") return true;
    for (const auto& c : columns_)
      if (c.first == name) return true;
    return false;
  }

  std::span<const double> column(const std::string& name) const {
    for (const auto& c : columns_)
      if (c.first == name) return c.second;
    throw NameError("unknown panel column: " + name);
  }

  // Outcome or regressor values as doubles (copies `crime`).
  std::vector<double> values(const std::string& name) const {
    if (name == "crime") return {crime_.begin(), crime_.end()};
    auto c = column(name);
    return {c.begin(), c.end()};
  }

  void add_column(const std::string& name, std::vector<double> values) {
    if (values.size() != n_rows())
      throw DimensionError("column '" + name + "' has " + std::to_string(values.size()) + " rows, panel has " +
                           std::to_string(n_rows()));
    for (auto& c : columns_)
      if (c.first == name) {
        c.second = std::move(values);
        return;
      }
    columns_.emplace_back(name, std::move(values));
  }

  const std::vector<std::pair<std::string, std::vector<double>>>& columns() const { return columns_; }
  std::vector<double>& mutable_column(const std::string& name) {
    for (auto& c : columns_)
      if (c.first == name) return c.second;
    throw NameError("unknown panel column: " + name);
  }

  friend bool operator==(const Panel& a, const Panel& b) {
    if (a.n_cells_ != b.n_cells_ || a.n_days_ != b.n_days_ || a.start_day_ != b.start_day_ || a.crime_ != b.crime_ ||
        a.columns_.size() != b.columns_.size())
      return false;
    for (std::size_t k = 0; k < a.columns_.size(); ++k) {
      if (a.columns_[k].first != b.columns_[k].first) return false;
      const auto& x = a.columns_[k].second;
      const auto& y = b.columns_[k].second;
      for (std::size_t i = 0; i < x.size(); ++i)
        if (!(x[i] == y[i] || (std::isnan(x[i]) && std::isnan(y[i])))) return false;
    }
    return true;
  }

 private:
  std::size_t n_cells_ = 0;
  int n_days_ = 0;
  std::int64_t start_day_ = 0;
  std::vector<std::int32_t> crime_;
  std::vector<std::pair<std::string, std::vector<double>>> columns_;
};

struct AssembleOptions {
  // Adds officers / seizures / mobile / vehicles columns for interactions.
  bool attribute_columns = true;
};

inline Panel assemble(std::size_t n_cells, const Aggregates& aggs, std::int64_t study_start_day, int n_days,
                      const AssembleOptions& opt = {}) {
  Panel p(n_cells, n_days, study_start_day);
  std::vector<double> blitz(p.n_rows(), 0.0);
  std::vector<double> officers, seizures, mobile, vehicles;
  if (opt.attribute_columns) {
    officers.assign(p.n_rows(), 0.0);
    seizures.assign(p.n_rows(), 0.0);
    mobile.assign(p.n_rows(), 0.0);
    vehicles.assign(p.n_rows(), 0.0);
  }
  for (const auto& a : aggs.rows) {
    if (a.cell < 0 || static_cast<std::size_t>(a.cell) >= n_cells || a.slot.day_ordinal < 0 ||
        a.slot.day_ordinal >= n_days)
      throw ConsistencyError("aggregate references cell " + std::to_string(a.cell) + ", day " +
                             std::to_string(a.slot.day_ordinal) + " outside the panel");
    const std::size_t r = p.row(static_cast<std::size_t>(a.cell), a.slot.day_ordinal, static_cast<int>(a.slot.period));
    p.crime()[r] += a.violent_count;
    blitz[r] = std::min(kHoursCap, blitz[r] + a.blitz_hours);
    if (opt.attribute_columns) {
      officers[r] += a.officers;
      seizures[r] += a.seizures;
      vehicles[r] += a.police_vehicles;
      mobile[r] = std::max(mobile[r], static_cast<double>(a.mobile));
    }
  }
  std::vector<double> blitz_sq(blitz.size());
  for (std::size_t i = 0; i < blitz.size(); ++i) blitz_sq[i] = blitz[i] * blitz[i];
  p.add_column("blitz", std::move(blitz));
  p.add_column("blitz_sq", std::move(blitz_sq));
  if (opt.attribute_columns) {
    p.add_column("officers", std::move(officers));
    p.add_column("seizures", std::move(seizures));
    p.add_column("mobile", std::move(mobile));
    p.add_column("police_vehicles", std::move(vehicles));
  }
  return p;
}

inline Panel assemble(const HexGrid& grid, const Aggregates& aggs, std::int64_t study_start_day, int n_days,
                      const AssembleOptions& opt = {}) {
  return assemble(grid.size(), aggs, study_start_day, n_days, opt);
}

// Value at (cell, dt) is the source value at (cell, dt - j); missing when dt < j.
inline std::vector<double> temporal_lag(const Panel& p, const std::string& column, int j) {
  if (j < 1) throw InvalidParameter("temporal lag order must be >= 1");
  std::vector<double> src = p.values(column);
  std::vector<double> out(src.size(), kMissing);
  const std::size_t shift = static_cast<std::size_t>(j) * p.n_cells();
  for (std::size_t r = shift; r < src.size(); ++r) out[r] = src[r - shift];
  return out;
}

// Applies W within every (day, period) slice.
inline std::vector<double> spatial_lag(const Panel& p, const WeightMatrix& w, const std::string& column) {
  if (w.size() != p.n_cells())
    throw DimensionError("weight matrix has " + std::to_string(w.size()) + " cells, panel has " +
                         std::to_string(p.n_cells()));
  std::vector<double> src = p.values(column);
  std::vector<double> out(src.size());
  const std::size_t n = p.n_cells();
  for (std::size_t s = 0; s < p.n_slots(); ++s) {
    std::span<const double> slice(src.data() + s * n, n);
    auto lagged = apply_weights(w, slice);
    std::copy(lagged.begin(), lagged.end(), out.begin() + static_cast<std::ptrdiff_t>(s * n));
  }
  return out;
}

inline std::vector<double> interaction(const Panel& p, const std::string& a, const std::string& b) {
  if (!p.has(a)) throw NameError("unknown panel column: " + a);
  if (!p.has(b)) throw NameError("unknown panel column: " + b);
  std::vector<double> x = p.values(a);
  std::vector<double> y = p.values(b);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= y[i];
  return x;
}

inline std::string lag_name(const std::string& column, int j) { return "lag_" + column + "_" + std::to_string(j); }
inline std::string interaction_name(const std::string& a, const std::string& b) { return a + "_x_" + b; }

// Adds w_blitz (when w is given), lag_blitz_j for each j, and the requested
// interactions. Returns the names added, in order.
inline std::vector<std::string> add_model_columns(Panel& p, const WeightMatrix* w, const std::vector<int>& lags,
                                                  const std::vector<std::pair<std::string, std::string>>& interactions,
                                                  bool lag_spatial = false) {
  std::vector<std::string> names;
  if (w) {
    p.add_column("w_blitz", spatial_lag(p, *w, "blitz"));
    names.push_back("w_blitz");
  }
  for (int j : lags) {
    p.add_column(lag_name("blitz", j), temporal_lag(p, "blitz", j));
    names.push_back(lag_name("blitz", j));
    if (lag_spatial && w) {
      p.add_column(lag_name("w_blitz", j), temporal_lag(p, "w_blitz", j));
      names.push_back(lag_name("w_blitz", j));
    }
  }
  for (const auto& [a, b] : interactions) {
    p.add_column(interaction_name(a, b), interaction(p, a, b));
    names.push_back(interaction_name(a, b));
  }
  return names;
}

// Integer ids for a named fixed-effect dimension.
//   cell_period_dow (group_a), day (group_b), cell, period, dow, cell_period, slot
inline std::vector<std::int32_t> panel_fe_ids(const Panel& p, const std::string& name) {
  std::vector<std::int32_t> ids(p.n_rows());
  for (std::size_t r = 0; r < p.n_rows(); ++r) {
    int v = 0;
    if (name == "cell_period_dow" || name == "group_a") v = p.group_a(r);
    else if (name == "day" || name == "group_b") v = p.group_b(r);
    else if (name == "cell") v = p.cell_of(r);
    else if (name == "period") v = p.period_of(r);
    else if (name == "dow") v = p.dow_of(r);
    else if (name == "cell_period") v = p.cell_of(r) * kPeriodsPerDay + p.period_of(r);
    else if (name == "slot") v = p.slot_of(r);
    else throw NameError("unknown fixed-effect dimension: " + name);
    ids[r] = v;
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Columnar file: <stem>.bin holds the raw little-endian columns back to back
// (crime as int32, everything else float64); <stem>.json describes them.

inline nlohmann::json write_panel(const Panel& p, const std::filesystem::path& stem) {
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::filesystem::path manifest = stem;
  manifest += ".json";
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw Error("cannot write " + bin.string());
  nlohmann::json cols = nlohmann::json::array();
  std::uint64_t offset = 0;
  auto put = [&](const std::string& name, const char* dtype, const void* data, std::uint64_t bytes) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    cols.push_back({{"name", name}, {"dtype", dtype}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  };
  put("crime", "int32", p.crime().data(), p.crime().size() * sizeof(std::int32_t));
  for (const auto& [name, v] : p.columns()) put(name, "float64", v.data(), v.size() * sizeof(double));
  if (!out) throw Error("short write on " + bin.string());
  nlohmann::json doc = {{"format", "blitzeval-panel"},
                        {"version", 1},
                        {"n_cells", p.n_cells()},
                        {"n_days", p.n_days()},
                        {"n_periods", kPeriodsPerDay},
                        {"rows", p.n_rows()},
                        {"row_layout", "((day * 4 + period) * n_cells + cell)"},
                        {"study_start_date", format_date(p.study_start_day())},
                        {"data_file", bin.filename().string()},
                        {"columns", cols}};
  std::ofstream m(manifest);
  m << doc.dump(2) << '\n';
  return doc;
}

inline Panel read_panel(const std::filesystem::path& manifest_path) {
  std::ifstream m(manifest_path);
  if (!m) throw Error("cannot open panel manifest " + manifest_path.string());
  nlohmann::json doc;
  m >> doc;
  if (doc.value("format", "") != "blitzeval-panel") throw ConsistencyError("not a panel manifest");
  auto start = parse_date(doc.at("study_start_date").get<std::string>());
  if (!start) throw ConsistencyError("bad study_start_date in panel manifest");
  Panel p(doc.at("n_cells").get<std::size_t>(), doc.at("n_days").get<int>(), *start);
  std::ifstream in(manifest_path.parent_path() / doc.at("data_file").get<std::string>(), std::ios::binary);
  if (!in) throw Error("cannot open panel data file");
  for (const auto& c : doc.at("columns")) {
    const auto name = c.at("name").get<std::string>();
    const auto dtype = c.at("dtype").get<std::string>();
    const auto bytes = c.at("bytes").get<std::uint64_t>();
    in.seekg(static_cast<std::streamoff>(c.at("offset").get<std::uint64_t>()));
    if (dtype == "int32") {
      if (bytes != p.n_rows() * sizeof(std::int32_t)) throw ConsistencyError("column size mismatch: " + name);
      in.read(reinterpret_cast<char*>(p.crime().data()), static_cast<std::streamsize>(bytes));
    } else {
      std::vector<double> v(p.n_rows());
      if (bytes != v.size() * sizeof(double)) throw ConsistencyError("column size mismatch: " + name);
      in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
      p.add_column(name, std::move(v));
    }
    if (!in) throw ConsistencyError("truncated panel data for column " + name);
  }
  return p;
}

// Debug export; refuses panels of a million rows or more.
inline void write_panel_csv(std::ostream& out, const Panel& p) {
  if (p.n_rows() >= 1000000) throw InvalidParameter("CSV export is limited to panels below 1e6 rows");
  out << "cell,day,period,dow,crime";
  for (const auto& c : p.columns()) out << ',' << c.first;
  out << '\n';
  char buf[64];
  for (std::size_t r = 0; r < p.n_rows(); ++r) {
    out << p.cell_of(r) << ',' << p.day_of(r) << ',' << p.period_of(r) << ',' << p.dow_of(r) << ',' << p.crime()[r];
    for (const auto& c : p.columns()) {
      double v = c.second[r];
      if (std::isnan(v)) {
        out << ",NA";
      } else {
        std::snprintf(buf, sizeof buf, ",%.12g", v);
        out << buf;
      }
    }
    out << '\n';
  }
}

}  // namespace blitzeval
