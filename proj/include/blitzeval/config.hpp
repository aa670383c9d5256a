#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "blitzeval/calendar.hpp"
#include "blitzeval/effects.hpp"
#include "blitzeval/error.hpp"
#include "blitzeval/simkit.hpp"
#include "blitzeval/weights.hpp"

namespace blitzeval {

// Bad configuration or unreadable input: the CLI maps this to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

struct WeightEntry {
  WeightScheme scheme = WeightScheme::InverseDistance;
  double cutoff_m = 0.0;  // inverse distance only

  std::string label() const {
    if (scheme == WeightScheme::BinaryContiguity) return "contiguity";
    char buf[32];
    std::snprintf(buf, sizeof buf, "idw_%gm", cutoff_m);
    return buf;
  }
};

struct RunConfig {
  std::filesystem::path boundary, crimes, blitzes, output_dir;
  double cell_area_km2 = 0.126;
  std::int64_t start_day = days_from_civil(2012, 1, 1);
  int n_days = 0;

  std::vector<WeightEntry> weights;
  bool row_standardize = true;
  double contiguity_conley_m = 500.0;

  std::vector<int> lags;
  std::vector<std::pair<std::string, std::string>> interactions;
  bool conley = true;
  std::vector<std::string> fe_dims{"cell_period_dow", "day"};

  CostBenefitParams cost_benefit;
  std::string effects_fit;  // fit label; empty = first inverse-distance fit at 1000 m, else the first
  std::optional<EffectInputs> effects_inputs;

  std::optional<DGPConfig> sim;
  std::optional<int> threads;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw InputError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw InputError("unknown key " + where + "." + k);
}

inline Money money_from_json(const nlohmann::json& v, const std::string& currency) {
  if (v.is_number()) return Money::from_units(v.get<double>(), currency);
  if (v.is_object()) {
    if (v.contains("minor")) return {v.at("minor").get<std::int64_t>(), v.value("currency", currency)};
    return Money::from_units(v.at("units").get<double>(), v.value("currency", currency));
  }
  throw InputError("money values must be numbers or {units|minor, currency}");
}

}  // namespace detail

inline std::vector<int> default_lags() {
  std::vector<int> l;
  for (int j = 1; j <= 16; ++j) l.push_back(j);
  return l;
}

// Relative paths resolve against `base_dir` (the config file's directory).
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  using detail::reject_unknown;
  RunConfig c;
  c.lags = default_lags();
  c.weights = {{WeightScheme::BinaryContiguity, 0.0},
               {WeightScheme::InverseDistance, 500.0},
               {WeightScheme::InverseDistance, 750.0},
               {WeightScheme::InverseDistance, 1000.0},
               {WeightScheme::InverseDistance, 1500.0}};
  try {
    reject_unknown(j, {"paths", "grid", "window", "weights", "model", "effects", "sim", "threads"}, "config");
    auto path = [&](const nlohmann::json& p, const char* k) -> std::filesystem::path {
      if (!p.contains(k)) return {};
      std::filesystem::path v = p[k].get<std::string>();
      return v.is_absolute() ? v : base_dir / v;
    };
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      reject_unknown(p, {"boundary", "crimes", "blitzes", "output_dir"}, "paths");
      c.boundary = path(p, "boundary");
      c.crimes = path(p, "crimes");
      c.blitzes = path(p, "blitzes");
      c.output_dir = path(p, "output_dir");
    }
    if (j.contains("grid")) {
      reject_unknown(j["grid"], {"nominal_cell_area_km2"}, "grid");
      c.cell_area_km2 = j["grid"].value("nominal_cell_area_km2", c.cell_area_km2);
      if (!(c.cell_area_km2 > 0.0)) throw InputError("grid.nominal_cell_area_km2 must be positive");
    }
    if (j.contains("window")) {
      const auto& w = j["window"];
      reject_unknown(w, {"start_date", "n_days"}, "window");
      if (w.contains("start_date")) {
        auto d = parse_date(w["start_date"].get<std::string>());
        if (!d) throw InputError("window.start_date must be YYYY-MM-DD");
        c.start_day = *d;
      }
      c.n_days = w.value("n_days", 0);
    }
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      reject_unknown(w, {"specs", "row_standardize", "contiguity_conley_m"}, "weights");
      if (w.contains("specs")) {
        c.weights.clear();
        for (const auto& e : w["specs"]) {
          if (e.is_string() && weight_scheme_from_string(e.get<std::string>()) == WeightScheme::BinaryContiguity)
            c.weights.push_back({WeightScheme::BinaryContiguity, 0.0});
          else if (e.is_number() && e.get<double>() > 0.0)
            c.weights.push_back({WeightScheme::InverseDistance, e.get<double>()});
          else
            throw InputError("weights.specs entries are \"contiguity\" or a positive cutoff in meters");
        }
        if (c.weights.empty()) throw InputError("weights.specs must be nonempty");
      }
      c.row_standardize = w.value("row_standardize", c.row_standardize);
      c.contiguity_conley_m = w.value("contiguity_conley_m", c.contiguity_conley_m);
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      reject_unknown(m, {"lags", "interactions", "conley", "fe_dims"}, "model");
      if (m.contains("lags")) c.lags = m["lags"].get<std::vector<int>>();
      for (int l : c.lags)
        if (l < 1) throw InputError("model.lags must be >= 1");
      if (m.contains("interactions"))
        for (const auto& p : m["interactions"]) {
          if (!p.is_array() || p.size() != 2) throw InputError("model.interactions entries are [column, column]");
          c.interactions.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
        }
      c.conley = m.value("conley", c.conley);
      if (m.contains("fe_dims")) c.fe_dims = m["fe_dims"].get<std::vector<std::string>>();
    }
    if (j.contains("effects")) {
      const auto& e = j["effects"];
      reject_unknown(e, {"fit", "inputs", "currency", "value_statistical_life", "value_statistical_robbery", "murder_share",
                         "treated_cell_periods", "avg_treated_outcome", "effect_fraction", "fines_total",
                         "officers_per_blitz", "vehicles_needed", "salary_per_year", "vehicle_unit_cost", "years",
                         "display_rate", "display_currency", "quoted_cost"},
                     "effects");
      auto& p = c.cost_benefit;
      const std::string cur = e.value("currency", std::string("BRL"));
      auto money = [&](const char* k, Money& dst) {
        dst.currency = cur;
        if (e.contains(k)) dst = detail::money_from_json(e[k], cur);
      };
      money("value_statistical_life", p.value_statistical_life);
      money("value_statistical_robbery", p.value_statistical_robbery);
      money("fines_total", p.fines_total);
      money("salary_per_year", p.salary_per_year);
      money("vehicle_unit_cost", p.vehicle_unit_cost);
      p.murder_share = e.value("murder_share", p.murder_share);
      if (e.contains("treated_cell_periods")) p.treated_cell_periods = e["treated_cell_periods"].get<double>();
      if (e.contains("avg_treated_outcome")) p.avg_treated_outcome = e["avg_treated_outcome"].get<double>();
      if (e.contains("effect_fraction")) p.effect_fraction = e["effect_fraction"].get<double>();
      p.officers_per_blitz = e.value("officers_per_blitz", p.officers_per_blitz);
      p.vehicles_needed = e.value("vehicles_needed", p.vehicles_needed);
      p.years = e.value("years", p.years);
      p.display_rate = e.value("display_rate", p.display_rate);
      p.display_currency = e.value("display_currency", p.display_currency);
      if (e.contains("quoted_cost")) p.quoted_cost = detail::money_from_json(e["quoted_cost"], cur);
      p.validate();
      c.effects_fit = e.value("fit", std::string());
      if (e.contains("inputs")) {
        const auto& in = e["inputs"];
        reject_unknown(in, {"delta", "theta", "rho", "avg_neighbors", "lags", "mean_treated_hours"}, "effects.inputs");
        EffectInputs ei;
        ei.delta = in.at("delta").get<double>();
        ei.theta = in.at("theta").get<double>();
        if (in.contains("rho")) ei.rho = in["rho"].get<double>();
        ei.avg_neighbors = in.value("avg_neighbors", 0.0);
        ei.mean_treated_hours = in.value("mean_treated_hours", 0.0);
        if (in.contains("lags"))
          for (const auto& [k, v] : in["lags"].items()) ei.lags[std::stoi(k)] = v.get<double>();
        c.effects_inputs = ei;
      }
    }
    if (j.contains("sim")) c.sim = dgp_from_json(j["sim"]);
    if (j.contains("threads")) c.threads = j["threads"].get<int>();
  } catch (const InputError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad config value: ") + e.what());
  } catch (const InvalidParameter& e) {
    throw InputError(e.what());
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("bad config value: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot open config file: " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("config file is not valid JSON: " + std::string(e.what()));
  }
  return run_config_from_json(j, std::filesystem::absolute(file).parent_path());
}

// Everything except paths: what the config hash covers.
inline nlohmann::json canonical_json(const RunConfig& c) {
  nlohmann::json w = nlohmann::json::array();
  for (const auto& e : c.weights)
    w.push_back(e.scheme == WeightScheme::BinaryContiguity ? nlohmann::json("contiguity") : nlohmann::json(e.cutoff_m));
  nlohmann::json inter = nlohmann::json::array();
  for (const auto& [a, b] : c.interactions) inter.push_back({a, b});
  const auto& p = c.cost_benefit;
  auto money = [](const Money& m) { return nlohmann::json{{"minor", m.minor}, {"currency", m.currency}}; };
  nlohmann::json eff = {{"value_statistical_life", money(p.value_statistical_life)},
                        {"value_statistical_robbery", money(p.value_statistical_robbery)},
                        {"murder_share", p.murder_share},
                        {"fines_total", money(p.fines_total)},
                        {"officers_per_blitz", p.officers_per_blitz},
                        {"vehicles_needed", p.vehicles_needed},
                        {"salary_per_year", money(p.salary_per_year)},
                        {"vehicle_unit_cost", money(p.vehicle_unit_cost)},
                        {"years", p.years},
                        {"display_rate", p.display_rate},
                        {"display_currency", p.display_currency},
                        {"fit", c.effects_fit}};
  if (p.treated_cell_periods) eff["treated_cell_periods"] = *p.treated_cell_periods;
  if (p.avg_treated_outcome) eff["avg_treated_outcome"] = *p.avg_treated_outcome;
  if (p.effect_fraction) eff["effect_fraction"] = *p.effect_fraction;
  if (p.quoted_cost) eff["quoted_cost"] = money(*p.quoted_cost);
  if (c.effects_inputs) {
    const auto& in = *c.effects_inputs;
    nlohmann::json lags = nlohmann::json::object();
    for (const auto& [k, v] : in.lags) lags[std::to_string(k)] = v;
    eff["inputs"] = {{"delta", in.delta}, {"theta", in.theta}, {"avg_neighbors", in.avg_neighbors},
                     {"mean_treated_hours", in.mean_treated_hours}, {"lags", lags}};
    if (in.rho) eff["inputs"]["rho"] = *in.rho;
  }
  nlohmann::json j = {{"grid", {{"nominal_cell_area_km2", c.cell_area_km2}}},
                      {"window", {{"start_date", format_date(c.start_day)}, {"n_days", c.n_days}}},
                      {"weights", {{"specs", w}, {"row_standardize", c.row_standardize}, {"contiguity_conley_m", c.contiguity_conley_m}}},
                      {"model", {{"lags", c.lags}, {"interactions", inter}, {"conley", c.conley}, {"fe_dims", c.fe_dims}}},
                      {"effects", eff}};
  if (c.sim) j["sim"] = to_json(*c.sim);
  return j;
}

}  // namespace blitzeval
