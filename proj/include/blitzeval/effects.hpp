#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "blitzeval/error.hpp"

namespace blitzeval {

// Integer minor units (cents / centavos) with a currency tag.
struct Money {
  std::int64_t minor = 0;
  std::string currency = "BRL";

  static Money from_units(double units, std::string cur = "BRL") {
    return {static_cast<std::int64_t>(std::llround(units * 100.0)), std::move(cur)};
  }
  double units() const { return static_cast<double>(minor) / 100.0; }

  friend Money operator+(const Money& a, const Money& b) {
    check_same(a, b);
    return {a.minor + b.minor, a.currency};
  }
  friend Money operator-(const Money& a, const Money& b) {
    check_same(a, b);
    return {a.minor - b.minor, a.currency};
  }
  // Integer scaling stays exact.
  friend Money operator*(const Money& a, std::int64_t k) { return {a.minor * k, a.currency}; }
  // Real scaling rounds once to the nearest minor unit.
  Money scaled(double f) const { return {static_cast<std::int64_t>(std::llround(static_cast<double>(minor) * f)), currency}; }
  friend bool operator==(const Money&, const Money&) = default;

  // Display only; `rate` is units of `to` per unit of this currency.
  Money converted(double rate, std::string to) const { return {static_cast<std::int64_t>(std::llround(static_cast<double>(minor) * rate)), std::move(to)}; }

  std::string str() const {
    const std::int64_t a = std::llabs(minor);
    std::string whole = std::to_string(a / 100);
    std::string grouped;
    for (std::size_t i = 0; i < whole.size(); ++i) {
      if (i && (whole.size() - i) % 3 == 0) grouped += ',';
      grouped += whole[i];
    }
    char frac[4];
    std::snprintf(frac, sizeof frac, "%02lld", static_cast<long long>(a % 100));
    return (minor < 0 ? "-" : "") + currency + " " + grouped + "." + frac;
  }

 private:
  static void check_same(const Money& a, const Money& b) {
    if (a.currency != b.currency) throw InvalidParameter("currency mismatch: " + a.currency + " vs " + b.currency);
  }
};

// One-hour effect including the quadratic term at 1 h: (exp(delta + theta) - 1) * 100.
inline double pct_effect(double delta, double theta) { return std::expm1(delta + theta) * 100.0; }

// Effect of a blitz of h hours, in percent.
inline double effect_at_hours(double delta, double theta, double h) { return std::expm1(delta * h + theta * h * h) * 100.0; }

// Average per-neighbour spillover of a row-standardized spatial lag.
inline double spatial_effect(double rho, double avg_neighbors) {
  if (!(avg_neighbors > 0.0)) throw InvalidParameter("spatial_effect needs avg_neighbors > 0");
  return std::expm1(rho / avg_neighbors) * 100.0;
}

inline double lag_effect(double gamma) { return std::expm1(gamma) * 100.0; }

enum class DoseGoal { Minimize, Maximize };

struct DoseRange {
  double lo = 0.0;
  double hi = 6.0;
};

// Vertex of delta*h + theta*h^2, clipped to the range. Minimizing needs
// theta > 0, maximizing theta < 0.
inline double optimal_duration(double delta, double theta, DoseGoal goal = DoseGoal::Minimize, DoseRange range = {}) {
  const bool interior = goal == DoseGoal::Minimize ? theta > 0.0 : theta < 0.0;
  if (!interior)
    throw NoInteriorMinimum(goal == DoseGoal::Minimize ? "quadratic term must be positive for a minimum"
                                                       : "quadratic term must be negative for a maximum");
  const double h = -delta / (2.0 * theta);
  return std::clamp(h, range.lo, range.hi);
}

struct Counterfactual {
  double baseline = 0.0;
  double prevented_per_period = 0.0;
  double total_prevented = 0.0;
};

inline Counterfactual counterfactual_prevented(double avg_treated_outcome, double effect_fraction,
                                               double treated_cell_periods) {
  if (!(effect_fraction > -1.0)) throw InvalidParameter("effect_fraction must exceed -1");
  if (effect_fraction > 0.0) throw InvalidParameter("effect_fraction must be <= 0 (a reduction)");
  Counterfactual c;
  c.baseline = avg_treated_outcome / (1.0 + effect_fraction);
  c.prevented_per_period = c.baseline - avg_treated_outcome;
  c.total_prevented = c.prevented_per_period * treated_cell_periods;
  return c;
}

struct CostBenefitParams {
  Money value_statistical_life = Money::from_units(1'119'000.0);
  Money value_statistical_robbery = Money::from_units(9'861.61);
  double murder_share = 0.05;
  // Left unset, these three come from the fitted panel.
  std::optional<double> treated_cell_periods;
  std::optional<double> avg_treated_outcome;
  std::optional<double> effect_fraction;
  Money fines_total = Money::from_units(0.0);
  std::int64_t officers_per_blitz = 30;
  std::int64_t vehicles_needed = 10;
  Money salary_per_year = Money::from_units(50'000.0);
  Money vehicle_unit_cost = Money::from_units(150'000.0);
  double years = 2.0;
  double display_rate = 0.2;  // US$ per R$
  std::string display_currency = "USD";
  // A cost total quoted elsewhere; when set the report shows the gap to the computed cost.
  std::optional<Money> quoted_cost;

  void validate() const {
    if (!(murder_share >= 0.0 && murder_share <= 1.0)) throw InvalidParameter("murder_share must lie in [0, 1]");
    if (!(years > 0.0)) throw InvalidParameter("years must be positive");
    if (officers_per_blitz < 0 || vehicles_needed < 0) throw InvalidParameter("counts must be nonnegative");
    const auto& c = value_statistical_life.currency;
    for (const Money* m : {&value_statistical_robbery, &fines_total, &salary_per_year, &vehicle_unit_cost})
      if (m->currency != c) throw InvalidParameter("cost-benefit money fields must share one currency");
    if (quoted_cost && quoted_cost->currency != c) throw InvalidParameter("quoted_cost must use the cost-benefit currency");
  }
};

struct CostBenefit {
  Money benefit;
  Money fines;
  Money cost;
};

inline CostBenefit cost_benefit(const CostBenefitParams& p, double total_prevented) {
  p.validate();
  CostBenefit out;
  const double per_crime = p.murder_share * static_cast<double>(p.value_statistical_life.minor) +
                           (1.0 - p.murder_share) * static_cast<double>(p.value_statistical_robbery.minor);
  out.benefit = {static_cast<std::int64_t>(std::llround(total_prevented * per_crime)), p.value_statistical_life.currency};
  out.fines = p.fines_total;
  out.cost = p.salary_per_year.scaled(static_cast<double>(p.officers_per_blitz) * p.years) +
             p.vehicle_unit_cost * p.vehicles_needed;
  return out;
}

struct EffectsReport {
  double delta = 0.0, theta = 0.0;
  std::optional<double> rho;
  double avg_neighbors = 0.0;
  double direct_pct = 0.0;
  std::optional<double> spatial_pct;
  std::map<int, double> lag_pcts;
  std::optional<double> optimal_hours;
  std::string optimal_note;
  double mean_treated_hours = 0.0;
  double effect_fraction = 0.0;
  double treated_cell_periods = 0.0;
  double avg_treated_outcome = 0.0;
  Counterfactual counterfactual;
  CostBenefit money;
  Money benefit_display, fines_display, cost_display;
  std::optional<Money> quoted_cost, cost_gap;  // gap = quoted - computed
};

struct EffectInputs {
  double delta = 0.0;
  double theta = 0.0;
  std::optional<double> rho;
  double avg_neighbors = 0.0;
  std::map<int, double> lags;
  // Observed treatment summary; used when the params leave them unset.
  double treated_cell_periods = 0.0;
  double avg_treated_outcome = 0.0;
  double mean_treated_hours = 0.0;
};

inline EffectsReport compute_effects(const EffectInputs& in, const CostBenefitParams& p) {
  p.validate();
  EffectsReport r;
  r.delta = in.delta;
  r.theta = in.theta;
  r.rho = in.rho;
  r.avg_neighbors = in.avg_neighbors;
  r.direct_pct = pct_effect(in.delta, in.theta);
  if (in.rho && in.avg_neighbors > 0.0) r.spatial_pct = spatial_effect(*in.rho, in.avg_neighbors);
  for (const auto& [j, g] : in.lags) r.lag_pcts[j] = lag_effect(g);
  try {
    r.optimal_hours = optimal_duration(in.delta, in.theta);
  } catch (const NoInteriorMinimum& e) {
    r.optimal_note = e.what();
  }
  r.mean_treated_hours = in.mean_treated_hours;
  r.treated_cell_periods = p.treated_cell_periods.value_or(in.treated_cell_periods);
  r.avg_treated_outcome = p.avg_treated_outcome.value_or(in.avg_treated_outcome);
  const double h = in.mean_treated_hours;
  r.effect_fraction = p.effect_fraction.value_or(std::expm1(in.delta * h + in.theta * h * h));
  if (r.effect_fraction <= 0.0 && r.effect_fraction > -1.0) {
    r.counterfactual = counterfactual_prevented(r.avg_treated_outcome, r.effect_fraction, r.treated_cell_periods);
  } else {
    // No reduction to monetize.
    r.counterfactual = {r.avg_treated_outcome, 0.0, 0.0};
  }
  r.money = cost_benefit(p, r.counterfactual.total_prevented);
  r.benefit_display = r.money.benefit.converted(p.display_rate, p.display_currency);
  r.fines_display = r.money.fines.converted(p.display_rate, p.display_currency);
  r.cost_display = r.money.cost.converted(p.display_rate, p.display_currency);
  if (p.quoted_cost) {
    r.quoted_cost = p.quoted_cost;
    r.cost_gap = *p.quoted_cost - r.money.cost;
  }
  return r;
}

inline nlohmann::json money_json(const Money& m) { return {{"minor", m.minor}, {"currency", m.currency}, {"units", m.units()}}; }

inline nlohmann::json effects_to_json(const EffectsReport& r) {
  nlohmann::json lags = nlohmann::json::object();
  for (const auto& [j, v] : r.lag_pcts) lags[std::to_string(j)] = v;
  nlohmann::json j = {
      {"inputs", {{"delta", r.delta}, {"theta", r.theta}, {"avg_neighbors", r.avg_neighbors}}},
      {"direct_pct", r.direct_pct},
      {"lag_pcts", lags},
      {"mean_treated_hours", r.mean_treated_hours},
      {"effect_fraction", r.effect_fraction},
      {"treated_cell_periods", r.treated_cell_periods},
      {"avg_treated_outcome", r.avg_treated_outcome},
      {"counterfactual",
       {{"baseline", r.counterfactual.baseline},
        {"prevented_per_period", r.counterfactual.prevented_per_period},
        {"total_prevented", r.counterfactual.total_prevented}}},
      {"benefit", money_json(r.money.benefit)},
      {"fines", money_json(r.money.fines)},
      {"cost", money_json(r.money.cost)},
      {"display", {{"benefit", money_json(r.benefit_display)}, {"fines", money_json(r.fines_display)}, {"cost", money_json(r.cost_display)}}}};
  j["inputs"]["rho"] = r.rho ? nlohmann::json(*r.rho) : nlohmann::json(nullptr);
  j["spatial_pct"] = r.spatial_pct ? nlohmann::json(*r.spatial_pct) : nlohmann::json(nullptr);
  j["optimal_hours"] = r.optimal_hours ? nlohmann::json(*r.optimal_hours) : nlohmann::json(nullptr);
  if (!r.optimal_note.empty()) j["optimal_note"] = r.optimal_note;
  if (r.quoted_cost) {
    j["quoted_cost"] = money_json(*r.quoted_cost);
    j["cost_gap"] = money_json(*r.cost_gap);
  }
  return j;
}

inline void write_effects_text(std::ostream& out, const EffectsReport& r) {
  char buf[160];
  auto line = [&](const char* fmt, auto... v) {
    std::snprintf(buf, sizeof buf, fmt, v...);
    out << buf << '\n';
  };
  line("direct effect (1 h):        %+.3f%%", r.direct_pct);
  if (r.spatial_pct) line("spatial effect per neighbour: %+.4f%% (%.2f neighbours)", *r.spatial_pct, r.avg_neighbors);
  for (const auto& [j, v] : r.lag_pcts) line("lag %2d:                     %+.3f%%", j, v);
  if (r.optimal_hours) line("optimal duration:           %.3f h", *r.optimal_hours);
  else out << "optimal duration:           none (" << r.optimal_note << ")\n";
  line("effect at mean dose %.2f h:  %+.3f%%", r.mean_treated_hours, r.effect_fraction * 100.0);
  line("baseline outcome:           %.6f", r.counterfactual.baseline);
  line("prevented per cell-period:  %.6f", r.counterfactual.prevented_per_period);
  line("total prevented:            %.3f over %.0f cell-periods", r.counterfactual.total_prevented, r.treated_cell_periods);
  out << "benefit:                    " << r.money.benefit.str() << " (" << r.benefit_display.str() << ")\n";
  out << "fines:                      " << r.money.fines.str() << " (" << r.fines_display.str() << ")\n";
  out << "cost:                       " << r.money.cost.str() << " (" << r.cost_display.str() << ")\n";
  if (r.quoted_cost)
    out << "quoted cost:                " << r.quoted_cost->str() << " (quoted - computed = " << r.cost_gap->str() << ")\n";
}

// hours,log_effect,pct_effect over [0, 6] in 0.1 h steps.
inline void write_dose_response_csv(std::ostream& out, double delta, double theta) {
  out << "hours,log_effect,pct_effect\n";
  char buf[96];
  for (int i = 0; i <= 60; ++i) {
    const double h = i / 10.0;
    std::snprintf(buf, sizeof buf, "%.1f,%.10g,%.10g\n", h, delta * h + theta * h * h, effect_at_hours(delta, theta, h));
    out << buf;
  }
}

}  // namespace blitzeval
