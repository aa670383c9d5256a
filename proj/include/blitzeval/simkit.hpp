#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blitzeval/calendar.hpp"
#include "blitzeval/error.hpp"
#include "blitzeval/estimator.hpp"
#include "blitzeval/hexgrid.hpp"
#include "blitzeval/ingest.hpp"
#include "blitzeval/panel.hpp"
#include "blitzeval/parallel.hpp"
#include "blitzeval/rng.hpp"
#include "blitzeval/weights.hpp"

namespace blitzeval {

struct DGPConfig {
  int n_cells = 400;
  int n_days = 360;
  std::int64_t start_day = days_from_civil(2012, 1, 1);
  double true_delta = -0.28;
  double true_theta = 0.046;
  double true_rho = -0.05;
  std::map<int, double> true_lags{{7, -0.06}};
  double fe_a_sd = 0.5;
  double fe_day_sd = 0.2;
  double base_log_rate = std::log(0.05);
  double prob_treated = 0.03;
  double hours_lo = 0.5, hours_hi = 6.0, hours_step = 0.5;
  WeightScheme weight_scheme = WeightScheme::InverseDistance;
  double weight_cutoff_m = 1000.0;
  bool row_standardize = true;
  double cell_area_km2 = 0.126;
  GeoPoint center{-3.75, -38.55};
  double murder_share = 0.05;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_cells < 9) throw InvalidParameter("simulation needs n_cells >= 9");
    if (n_days < 1) throw InvalidParameter("simulation needs n_days >= 1");
    if (!(prob_treated >= 0.0 && prob_treated <= 1.0)) throw InvalidParameter("prob_treated must lie in [0, 1]");
    if (!(fe_a_sd >= 0.0) || !(fe_day_sd >= 0.0)) throw InvalidParameter("FE standard deviations must be nonnegative");
    if (!(hours_step > 0.0) || !(hours_lo > 0.0) || hours_hi < hours_lo || hours_hi > kHoursCap)
      throw InvalidParameter("hours distribution must satisfy 0 < lo <= hi <= 6");
    for (const auto& [j, g] : true_lags)
      if (j < 1) throw InvalidParameter("lag orders must be >= 1");
    if (!(murder_share >= 0.0 && murder_share <= 1.0)) throw InvalidParameter("murder_share must lie in [0, 1]");
  }

  int n_hour_levels() const { return static_cast<int>(std::floor((hours_hi - hours_lo) / hours_step + 1e-9)) + 1; }
  double hour_level(int k) const { return hours_lo + hours_step * k; }

  std::map<std::string, double> truth() const {
    std::map<std::string, double> t{{"blitz", true_delta}, {"blitz_sq", true_theta}, {"w_blitz", true_rho}};
    for (const auto& [j, g] : true_lags) t[lag_name("blitz", j)] = g;
    return t;
  }
};

inline nlohmann::json to_json(const DGPConfig& c) {
  nlohmann::json lags = nlohmann::json::object();
  for (const auto& [j, g] : c.true_lags) lags[std::to_string(j)] = g;
  return {{"n_cells", c.n_cells},
          {"n_days", c.n_days},
          {"start_date", format_date(c.start_day)},
          {"true_delta", c.true_delta},
          {"true_theta", c.true_theta},
          {"true_rho", c.true_rho},
          {"true_lags", lags},
          {"fe_a_sd", c.fe_a_sd},
          {"fe_day_sd", c.fe_day_sd},
          {"base_log_rate", c.base_log_rate},
          {"prob_treated", c.prob_treated},
          {"hours", {{"lo", c.hours_lo}, {"hi", c.hours_hi}, {"step", c.hours_step}}},
          {"weights", {{"scheme", to_string(c.weight_scheme)}, {"cutoff_m", c.weight_cutoff_m}, {"row_standardize", c.row_standardize}}},
          {"cell_area_km2", c.cell_area_km2},
          {"center", {{"lat", c.center.lat}, {"lon", c.center.lon}}},
          {"murder_share", c.murder_share},
          {"seed", c.seed}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline DGPConfig dgp_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{"n_cells", "n_days", "start_date", "true_delta", "true_theta", "true_rho",
                                              "true_lags", "fe_a_sd", "fe_day_sd", "base_log_rate", "prob_treated",
                                              "hours", "weights", "cell_area_km2", "center", "murder_share", "seed"};
  if (!j.is_object()) throw InvalidParameter("sim config must be an object");
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw InvalidParameter("unknown sim key: " + k);
  DGPConfig c;
  try {
    c.n_cells = j.value("n_cells", c.n_cells);
    c.n_days = j.value("n_days", c.n_days);
    if (j.contains("start_date")) {
      auto d = parse_date(j["start_date"].get<std::string>());
      if (!d) throw InvalidParameter("sim.start_date is not YYYY-MM-DD");
      c.start_day = *d;
    }
    c.true_delta = j.value("true_delta", c.true_delta);
    c.true_theta = j.value("true_theta", c.true_theta);
    c.true_rho = j.value("true_rho", c.true_rho);
    if (j.contains("true_lags")) {
      c.true_lags.clear();
      for (const auto& [k, v] : j["true_lags"].items()) c.true_lags[std::stoi(k)] = v.get<double>();
    }
    c.fe_a_sd = j.value("fe_a_sd", c.fe_a_sd);
    c.fe_day_sd = j.value("fe_day_sd", c.fe_day_sd);
    c.base_log_rate = j.value("base_log_rate", c.base_log_rate);
    c.prob_treated = j.value("prob_treated", c.prob_treated);
    if (j.contains("hours")) {
      const auto& h = j["hours"];
      c.hours_lo = h.value("lo", c.hours_lo);
      c.hours_hi = h.value("hi", c.hours_hi);
      c.hours_step = h.value("step", c.hours_step);
    }
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      if (w.contains("scheme")) c.weight_scheme = weight_scheme_from_string(w["scheme"].get<std::string>());
      c.weight_cutoff_m = w.value("cutoff_m", c.weight_cutoff_m);
      c.row_standardize = w.value("row_standardize", c.row_standardize);
    }
    c.cell_area_km2 = j.value("cell_area_km2", c.cell_area_km2);
    if (j.contains("center")) c.center = {j["center"].at("lat").get<double>(), j["center"].at("lon").get<double>()};
    c.murder_share = j.value("murder_share", c.murder_share);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidParameter(std::string("bad sim config: ") + e.what());
  }
  c.validate();
  return c;
}

// Grid and weights depend only on the geometry part of the config, so a
// Monte Carlo run builds them once.
struct SimGeometry {
  Polygon boundary;
  HexGrid grid;
  WeightMatrix weights;
};

inline std::shared_ptr<const SimGeometry> make_geometry(const DGPConfig& c) {
  c.validate();
  auto g = std::make_shared<SimGeometry>();
  g->boundary = square_boundary_for_cells(c.center, c.n_cells, c.cell_area_km2);
  g->grid = build_hex_grid(g->boundary, c.cell_area_km2);
  if (static_cast<int>(g->grid.size()) != c.n_cells)
    throw InvalidParameter("no near-square boundary tessellates into exactly " + std::to_string(c.n_cells) + " cells (closest " +
                           std::to_string(g->grid.size()) + ")");
  std::optional<double> cutoff;
  if (c.weight_scheme == WeightScheme::InverseDistance) cutoff = c.weight_cutoff_m;
  g->weights = build_weights(g->grid, c.weight_scheme, cutoff, c.row_standardize);
  return g;
}

struct SyntheticDataset {
  DGPConfig config;
  std::shared_ptr<const SimGeometry> geometry;
  Panel panel;  // crime, blitz, blitz_sq, attribute columns, w_blitz
  std::vector<double> realized_lambda;
  std::vector<int> blitz_offset_halfhours;  // start offset within the period, treated rows only
  std::map<std::string, double> truth;
};

namespace detail {

inline constexpr std::uint32_t kDayStream = 0xFFFFFFFFu;

struct Attr {
  int officers, vehicles, seizures, stopped, tickets;
  bool mobile, weapons, drugs;
};

inline Attr draw_attributes(const RandomStream& rs, std::uint64_t slot) {
  const auto a = rs.raw(Purpose::Attributes, slot);
  const auto b = rs.raw(Purpose::Attributes, slot + (std::uint64_t{1} << 40));
  Attr out;
  out.officers = 4 + static_cast<int>(a[0] % 9);
  out.vehicles = 1 + static_cast<int>(a[1] % 3);
  out.mobile = (a[2] % 10) < 3;
  out.stopped = static_cast<int>(a[3] % 60);
  out.tickets = static_cast<int>(b[0] % 15);
  out.seizures = static_cast<int>(b[1] % 4);
  out.weapons = (b[2] % 20) == 0;
  out.drugs = (b[3] % 10) == 0;
  return out;
}

}  // namespace detail

// ln lambda = base + a_(cell,period,dow) + b_day + delta*h + theta*h^2
//           + rho * (W h)_slot + sum_j gamma_j * h_(slot - j)
// with pre-sample hours taken as zero.
inline SyntheticDataset simulate(const DGPConfig& c, std::shared_ptr<const SimGeometry> geom = nullptr, int threads = 1) {
  c.validate();
  if (!geom) geom = make_geometry(c);
  SyntheticDataset ds;
  ds.config = c;
  ds.geometry = geom;
  ds.truth = c.truth();
  Panel p(static_cast<std::size_t>(c.n_cells), c.n_days, c.start_day);
  const std::size_t n_cells = p.n_cells();
  const std::size_t n_slots = p.n_slots();
  const std::size_t n_rows = p.n_rows();

  std::vector<double> fe_day(static_cast<std::size_t>(c.n_days));
  {
    RandomStream rs(c.seed, detail::kDayStream);
    for (int d = 0; d < c.n_days; ++d) fe_day[static_cast<std::size_t>(d)] = c.fe_day_sd * rs.normal(Purpose::FeDay, static_cast<std::uint64_t>(d));
  }

  std::vector<double> blitz(n_rows, 0.0), officers(n_rows, 0.0), seizures(n_rows, 0.0), mobile(n_rows, 0.0),
      vehicles(n_rows, 0.0);
  std::vector<int> offset(n_rows, -1);
  const int levels = c.n_hour_levels();
  parallel_for(n_cells, threads, [&](std::size_t cell) {
    RandomStream rs(c.seed, static_cast<std::uint32_t>(cell));
    for (std::size_t s = 0; s < n_slots; ++s) {
      if (rs.uniform(Purpose::Treat, s) >= c.prob_treated) continue;
      const auto u = rs.uniform2(Purpose::Hours, s);
      const int k = std::min(levels - 1, static_cast<int>(u[0] * levels));
      const double h = c.hour_level(k);
      const std::size_t r = s * n_cells + cell;
      blitz[r] = h;
      const int room = static_cast<int>(std::floor((kHoursCap - h) / 0.5 + 1e-9));
      offset[r] = std::min(room, static_cast<int>(u[1] * (room + 1)));
      const auto a = detail::draw_attributes(rs, s);
      officers[r] = a.officers;
      vehicles[r] = a.vehicles;
      seizures[r] = a.seizures;
      mobile[r] = a.mobile ? 1.0 : 0.0;
    }
  });
  std::vector<double> blitz_sq(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) blitz_sq[i] = blitz[i] * blitz[i];
  p.add_column("blitz", blitz);
  p.add_column("blitz_sq", std::move(blitz_sq));
  p.add_column("officers", std::move(officers));
  p.add_column("seizures", std::move(seizures));
  p.add_column("mobile", std::move(mobile));
  p.add_column("police_vehicles", std::move(vehicles));
  p.add_column("w_blitz", spatial_lag(p, geom->weights, "blitz"));
  const auto wb = p.column("w_blitz");

  ds.realized_lambda.assign(n_rows, 0.0);
  auto& crime = p.crime();
  const int start_dow = p.start_weekday();
  parallel_for(n_cells, threads, [&](std::size_t cell) {
    RandomStream rs(c.seed, static_cast<std::uint32_t>(cell));
    double fe_a[kPeriodsPerDay * 7];
    for (int g = 0; g < kPeriodsPerDay * 7; ++g) fe_a[g] = c.fe_a_sd * rs.normal(Purpose::FeA, static_cast<std::uint64_t>(g));
    for (std::size_t s = 0; s < n_slots; ++s) {
      const std::size_t r = s * n_cells + cell;
      const int day = static_cast<int>(s / kPeriodsPerDay);
      const int period = static_cast<int>(s % kPeriodsPerDay);
      const int dow = (start_dow + day) % 7;
      const double h = blitz[r];
      double eta = c.base_log_rate + fe_a[period * 7 + dow] + fe_day[static_cast<std::size_t>(day)] + c.true_delta * h +
                   c.true_theta * h * h + c.true_rho * wb[r];
      for (const auto& [j, g] : c.true_lags)
        if (s >= static_cast<std::size_t>(j)) eta += g * blitz[r - static_cast<std::size_t>(j) * n_cells];
      const double lambda = std::exp(eta);
      ds.realized_lambda[r] = lambda;
      crime[r] = static_cast<std::int32_t>(rs.poisson(Purpose::Outcome, s, lambda));
    }
  });
  ds.blitz_offset_halfhours = std::move(offset);
  ds.panel = std::move(p);
  return ds;
}

// Crime and blitz records in the ingest schema that aggregate back to the
// simulated panel. Events sit on cell centroids.
struct SyntheticRecords {
  std::vector<CrimeEvent> crimes;
  std::vector<BlitzRecord> blitzes;
};

inline SyntheticRecords to_records(const SyntheticDataset& ds) {
  const auto& p = ds.panel;
  const auto& grid = ds.geometry->grid;
  const auto& c = ds.config;
  const auto blitz = p.column("blitz");
  SyntheticRecords out;
  for (std::size_t r = 0; r < p.n_rows(); ++r) {
    const int cell = p.cell_of(r);
    const std::size_t s = static_cast<std::size_t>(p.slot_of(r));
    RandomStream rs(c.seed, static_cast<std::uint32_t>(cell));
    const std::int64_t period_start =
        (p.study_start_day() + p.day_of(r)) * 86400 + static_cast<std::int64_t>(p.period_of(r)) * kPeriodSeconds;
    if (blitz[r] > 0.0) {
      const auto a = detail::draw_attributes(rs, s);
      BlitzRecord b;
      b.location = grid.cell(cell).centroid;
      b.start = DateTime{period_start + ds.blitz_offset_halfhours[r] * kHalfHour};
      b.end = DateTime{b.start.seconds + static_cast<std::int64_t>(std::llround(blitz[r] * 3600.0))};
      b.officers = a.officers;
      b.police_vehicles = a.vehicles;
      b.blitz_type = a.mobile ? BlitzType::Mobile : BlitzType::Fixed;
      b.vehicles_stopped = a.stopped;
      b.tickets = a.tickets;
      b.seizures = a.seizures;
      b.weapons_found = a.weapons;
      b.drugs_found = a.drugs;
      out.blitzes.push_back(b);
    }
    for (std::int32_t k = 0; k < p.crime()[r]; ++k) {
      const auto u = rs.uniform2(Purpose::Placement, (s << 20) + static_cast<std::uint64_t>(k));
      CrimeEvent e;
      e.kind = u[0] < c.murder_share ? CrimeKind::Murder : CrimeKind::Robbery;
      e.location = grid.cell(cell).centroid;
      e.timestamp = DateTime{period_start + std::min<std::int64_t>(kPeriodSeconds - 1, static_cast<std::int64_t>(u[1] * kPeriodSeconds))};
      out.crimes.push_back(e);
    }
  }
  auto by_time = [](const auto& a, const auto& b) { return a.timestamp.seconds < b.timestamp.seconds; };
  std::stable_sort(out.crimes.begin(), out.crimes.end(), by_time);
  std::stable_sort(out.blitzes.begin(), out.blitzes.end(),
                   [](const BlitzRecord& a, const BlitzRecord& b) { return a.start.seconds < b.start.seconds; });
  return out;
}

inline nlohmann::json truth_json(const SyntheticDataset& ds) {
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [k, v] : ds.truth) t[k] = v;
  return {{"coefficients", t},
          {"config", to_json(ds.config)},
          {"n_cells", ds.geometry->grid.size()},
          {"avg_neighbors", ds.geometry->weights.avg_neighbor_count}};
}

// ---------------------------------------------------------------------------
// Monte Carlo recovery.

struct RecoveryOptions {
  // Terms estimated besides blitz, blitz_sq and w_blitz; default = truth lag keys.
  std::optional<std::vector<int>> lags;
  bool include_w_blitz = true;
  bool wald_on_lags = true;
  std::uint64_t first_seed = 1;
  int threads = 1;
  FitOptions fit;
};

struct CoefficientRecovery {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double mc_se = 0.0;  // sd / sqrt(n)
  double rmse = 0.0;
  double coverage = 0.0;
  bool coverage_flag = false;  // outside [0.90, 0.98]
  std::vector<double> estimates;
  std::vector<double> ses;
};

struct RecoveryReport {
  int n_seeds = 0;
  int n_used = 0;
  std::vector<std::uint64_t> failed_seeds;
  std::vector<std::string> failure_messages;
  std::vector<CoefficientRecovery> coefficients;
  std::vector<double> wald_p;
  double wald_rejection_05 = std::numeric_limits<double>::quiet_NaN();

  const CoefficientRecovery& coef(const std::string& name) const {
    for (const auto& c : coefficients)
      if (c.name == name) return c;
    throw NameError("no recovery entry for " + name);
  }
};

inline std::vector<std::string> recovery_terms(const DGPConfig& c, const RecoveryOptions& opt, std::vector<int>* lags_out) {
  std::vector<int> lags;
  if (opt.lags) lags = *opt.lags;
  else
    for (const auto& [j, g] : c.true_lags) lags.push_back(j);
  std::vector<std::string> terms{"blitz", "blitz_sq"};
  if (opt.include_w_blitz) terms.push_back("w_blitz");
  for (int j : lags) terms.push_back(lag_name("blitz", j));
  if (lags_out) *lags_out = lags;
  return terms;
}

// One simulated fit: the estimation step of a recovery run.
inline FitResult fit_synthetic(const SyntheticDataset& ds, const std::vector<std::string>& terms, const std::vector<int>& lags,
                              const FitOptions& fo) {
  Panel p = ds.panel;
  for (int j : lags) p.add_column(lag_name("blitz", j), temporal_lag(p, "blitz", j));
  ModelSpec spec;
  spec.regressors = terms;
  Design d = make_design(p, spec);
  return fit_fe_poisson(d, spec, fo);
}

inline RecoveryReport recovery_study(const DGPConfig& base, int n_seeds, const RecoveryOptions& opt = {}) {
  if (n_seeds < 50) throw InvalidParameter("recovery_study needs n_seeds >= 50");
  base.validate();
  std::vector<int> lags;
  const auto terms = recovery_terms(base, opt, &lags);
  const auto truth = base.truth();
  auto geom = make_geometry(base);
  std::vector<std::string> lag_terms;
  for (int j : lags) lag_terms.push_back(lag_name("blitz", j));

  RecoveryReport rep;
  rep.n_seeds = n_seeds;
  rep.coefficients.resize(terms.size());
  for (std::size_t k = 0; k < terms.size(); ++k) {
    rep.coefficients[k].name = terms[k];
    auto it = truth.find(terms[k]);
    rep.coefficients[k].truth = it == truth.end() ? 0.0 : it->second;
  }
  FitOptions fo = opt.fit;
  fo.threads = opt.threads;
  for (int s = 0; s < n_seeds; ++s) {
    DGPConfig c = base;
    c.seed = opt.first_seed + static_cast<std::uint64_t>(s);
    try {
      auto ds = simulate(c, geom, opt.threads);
      auto fit = fit_synthetic(ds, terms, lags, fo);
      if (!fit.converged) {
        rep.failed_seeds.push_back(c.seed);
        rep.failure_messages.push_back(fit.message);
        continue;
      }
      for (std::size_t k = 0; k < terms.size(); ++k) {
        rep.coefficients[k].estimates.push_back(fit.coefficient(terms[k]));
        rep.coefficients[k].ses.push_back(fit.se(terms[k]));
      }
      if (opt.wald_on_lags && !lag_terms.empty()) rep.wald_p.push_back(wald_joint_test(fit, lag_terms).p_value);
      ++rep.n_used;
    } catch (const Error& e) {
      rep.failed_seeds.push_back(c.seed);
      rep.failure_messages.push_back(e.what());
    }
  }
  for (auto& cr : rep.coefficients) {
    const double n = static_cast<double>(cr.estimates.size());
    if (n < 2) continue;
    double sum = 0.0, covered = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < cr.estimates.size(); ++i) {
      sum += cr.estimates[i];
      sq += (cr.estimates[i] - cr.truth) * (cr.estimates[i] - cr.truth);
      if (std::abs(cr.estimates[i] - cr.truth) <= 1.959963984540054 * cr.ses[i]) covered += 1.0;
    }
    cr.mean = sum / n;
    cr.bias = cr.mean - cr.truth;
    double var = 0.0;
    for (double e : cr.estimates) var += (e - cr.mean) * (e - cr.mean);
    cr.sd = std::sqrt(var / (n - 1.0));
    cr.mc_se = cr.sd / std::sqrt(n);
    cr.rmse = std::sqrt(sq / n);
    cr.coverage = covered / n;
    cr.coverage_flag = cr.coverage < 0.90 || cr.coverage > 0.98;
  }
  if (!rep.wald_p.empty()) {
    double rej = 0.0;
    for (double p : rep.wald_p) rej += p < 0.05 ? 1.0 : 0.0;
    rep.wald_rejection_05 = rej / static_cast<double>(rep.wald_p.size());
  }
  return rep;
}

inline nlohmann::json recovery_to_json(const RecoveryReport& r) {
  nlohmann::json coefs = nlohmann::json::array();
  for (const auto& c : r.coefficients)
    coefs.push_back({{"name", c.name}, {"truth", c.truth}, {"mean", c.mean}, {"bias", c.bias}, {"sd", c.sd},
                     {"mc_se", c.mc_se}, {"rmse", c.rmse}, {"coverage", c.coverage}, {"coverage_flag", c.coverage_flag}});
  nlohmann::json j = {{"n_seeds", r.n_seeds}, {"n_used", r.n_used}, {"failed_seeds", r.failed_seeds},
                      {"failure_messages", r.failure_messages}, {"coefficients", coefs}};
  j["wald_rejection_05"] = r.wald_p.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.wald_rejection_05);
  return j;
}

}  // namespace blitzeval
