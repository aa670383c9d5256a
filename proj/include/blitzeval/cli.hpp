#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "blitzeval/config.hpp"
#include "blitzeval/effects.hpp"
#include "blitzeval/estimator.hpp"
#include "blitzeval/hexgrid.hpp"
#include "blitzeval/ingest.hpp"
#include "blitzeval/panel.hpp"
#include "blitzeval/simkit.hpp"
#include "blitzeval/weights.hpp"

namespace blitzeval {

inline constexpr const char* kVersion = "1.0.0";

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr)) throw Error("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Stage failed for reasons other than bad input: exit code 1.
class StageFailure : public Error {
 public:
  using Error::Error;
};

struct CommandOptions {
  std::string command;
  std::filesystem::path config_path;
  std::optional<std::filesystem::path> out_override;
  std::optional<int> threads;
  int verbosity = 0;
};

class Runner {
 public:
  explicit Runner(CommandOptions opt) : opt_(std::move(opt)) {}

  // Returns the process exit code.
  int run() {
    started_ = now_iso();
    stage_ = "config";
    try {
      if (opt_.command == "report") {
        if (!opt_.out_override && opt_.config_path.empty()) throw InputError("report needs --out or --config");
        if (!opt_.config_path.empty()) cfg_ = load_run_config(opt_.config_path);
      } else {
        if (opt_.config_path.empty()) throw InputError("--config is required");
        cfg_ = load_run_config(opt_.config_path);
      }
      if (opt_.out_override) cfg_.output_dir = *opt_.out_override;
      if (cfg_.output_dir.empty()) throw InputError("no output directory: set paths.output_dir or pass --out");
      // --threads, then the config, then BLITZEVAL_THREADS, then 1.
      threads_ = opt_.threads.value_or(cfg_.threads.value_or(env_threads()));
      if (threads_ < 1) throw InputError("threads must be >= 1");
      std::error_code ec;
      std::filesystem::create_directories(cfg_.output_dir, ec);
      if (ec || !std::filesystem::is_directory(cfg_.output_dir))
        throw InputError("output directory is not writable: " + cfg_.output_dir.string());

      stage_ = "inputs";
      hash_inputs();
      run_id_ = sha256_hex(config_hash_ + "|" + inputs_.dump() + "|" + kVersion).substr(0, 16);
      dispatch();
      status_ = "ok";
    } catch (const InputError& e) {
      return fail(2, e.what());
    } catch (const InvalidBoundary& e) {
      return fail(2, e.what());
    } catch (const Error& e) {
      return fail(1, e.what());
    } catch (const std::exception& e) {
      return fail(1, e.what());
    }
    write_manifest();
    return 0;
  }

  const std::string& run_id() const { return run_id_; }

 private:
  // ------------------------------------------------------------------ plumbing

  void log(int level, const std::string& msg) const {
    if (opt_.verbosity >= level) std::cerr << "[" << opt_.command << "] " << msg << '\n';
  }

  static int env_threads() {
    const char* v = std::getenv("BLITZEVAL_THREADS");
    if (!v || !*v) return 1;
    try {
      return std::stoi(v);
    } catch (const std::exception&) {
      throw InputError(std::string("BLITZEVAL_THREADS is not an integer: ") + v);
    }
  }

  static std::string now_iso() {
    std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
  }

  int fail(int code, const std::string& msg) {
    std::cerr << "blitzeval " << opt_.command << ": " << (code == 2 ? "input error" : "stage failure") << " in "
              << stage_ << ": " << msg << '\n';
    status_ = "failed";
    error_ = msg;
    failed_stage_ = stage_;
    if (!cfg_.output_dir.empty() && std::filesystem::is_directory(cfg_.output_dir)) {
      try {
        write_manifest();
      } catch (...) {
      }
    }
    return code;
  }

  bool needs_boundary() const {
    const auto& c = opt_.command;
    if (c == "effects") return !cfg_.effects_inputs;
    return c == "grid" || c == "ingest" || c == "panel" || c == "weights" || c == "fit" || c == "pipeline";
  }
  bool needs_records() const {
    const auto& c = opt_.command;
    if (c == "effects") return !cfg_.effects_inputs;
    return c == "ingest" || c == "panel" || c == "fit" || c == "pipeline";
  }

  void hash_inputs() {
    config_hash_ = sha256_hex(canonical_json(cfg_).dump());
    inputs_ = nlohmann::json::object();
    auto add = [&](const char* name, const std::filesystem::path& p) {
      if (p.empty()) throw InputError(std::string("paths.") + name + " is required for " + opt_.command);
      if (!std::filesystem::is_regular_file(p)) throw InputError(std::string(name) + " file not found: " + p.string());
      inputs_[name] = {{"file", p.filename().string()}, {"sha256", sha256_hex(read_file(p))}};
    };
    if (needs_boundary()) add("boundary", cfg_.boundary);
    if (needs_records()) {
      add("crimes", cfg_.crimes);
      add("blitzes", cfg_.blitzes);
      if (cfg_.n_days <= 0) throw InputError("window.n_days must be positive");
    }
    if (opt_.command == "simulate" && !cfg_.sim) throw InputError("simulate needs a sim block in the config");
  }

  void put(const std::string& rel, const std::string& content) {
    const auto path = cfg_.output_dir / rel;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw StageFailure("cannot write " + path.string());
    outputs_[rel] = sha256_hex(content);
  }
  void put_json(const std::string& rel, nlohmann::json j) {
    j["run_id"] = run_id_;
    put(rel, j.dump(2) + "\n");
  }
  std::string csv_head() const { return "# run_id: " + run_id_ + "\n"; }

  void write_manifest() {
    nlohmann::json m = {{"artifact", "blitzeval"},
                        {"artifact_version", kVersion},
                        {"command", opt_.command},
                        {"run_id", run_id_},
                        {"config_hash", config_hash_},
                        {"inputs", inputs_},
                        {"stages", stages_},
                        {"outputs", outputs_},
                        {"status", status_},
                        {"timestamps", {{"started_at", started_}, {"finished_at", now_iso()}}}};
    if (!failed_stage_.empty()) {
      m["failed_stage"] = failed_stage_;
      m["error"] = error_;
    }
    std::ofstream out(cfg_.output_dir / (opt_.command + ".manifest.json"));
    out << m.dump(2) << '\n';
  }

  // -------------------------------------------------------------------- stages

  void dispatch() {
    const auto& c = opt_.command;
    if (c == "grid") {
      grid_stage(true);
    } else if (c == "ingest") {
      grid_stage(false);
      ingest_stage(true);
    } else if (c == "panel") {
      grid_stage(false);
      ingest_stage(false);
      panel_stage(true);
    } else if (c == "weights") {
      grid_stage(false);
      weights_stage(true);
    } else if (c == "fit") {
      upstream(false);
      fit_stage(true);
    } else if (c == "effects") {
      if (cfg_.effects_inputs) {
        effects_from_inputs();
      } else {
        upstream(false);
        fit_stage(false);
        effects_stage();
      }
    } else if (c == "pipeline") {
      upstream(true);
      fit_stage(true);
      effects_stage();
    } else if (c == "simulate") {
      simulate_stage();
    } else if (c == "report") {
      report_stage();
    } else {
      throw InputError("unknown command: " + c);
    }
  }

  void upstream(bool write) {
    grid_stage(write);
    ingest_stage(write);
    panel_stage(write);
    weights_stage(write);
  }

  void grid_stage(bool write) {
    stage_ = "grid";
    grid_ = build_hex_grid(read_boundary_geojson(cfg_.boundary.string()), cfg_.cell_area_km2);
    double area = 0.0;
    for (const auto& c : grid_.cells()) area += c.area_km2;
    const double mean_area = area / static_cast<double>(grid_.size());
    stages_["grid"] = {{"cells", grid_.size()}, {"mean_cell_area_km2", mean_area}, {"spacing_m", grid_.spacing_m()}};
    log(1, "grid: " + std::to_string(grid_.size()) + " cells");
    if (opt_.command == "grid") {
      char buf[128];
      std::snprintf(buf, sizeof buf, "cells: %zu\nmean cell area: %.4f km2\n", grid_.size(), mean_area);
      std::cout << buf;
    }
    if (write) {
      std::ostringstream s;
      s << csv_head();
      write_cells_csv(s, grid_);
      put("grid/cells.csv", s.str());
      put_json("grid/summary.json", stages_["grid"]);
      put_json("grid/boundary.geojson", polygon_to_geojson(grid_.boundary()));
    }
  }

  void ingest_stage(bool write) {
    stage_ = "ingest";
    std::vector<DropRecord> parse_drops;
    std::ifstream cin_(cfg_.crimes), bin_(cfg_.blitzes);
    if (!cin_) throw InputError("cannot open crimes file");
    if (!bin_) throw InputError("cannot open blitzes file");
    std::vector<CrimeEvent> crimes;
    std::vector<BlitzRecord> blitzes;
    try {
      crimes = read_crimes_csv(cin_, parse_drops);
      blitzes = read_blitzes_csv(bin_, parse_drops);
    } catch (const InvalidRecord& e) {
      throw InputError(e.what());
    }
    window_ = {cfg_.start_day, cfg_.n_days};
    aggs_ = aggregate(grid_, window_, crimes, blitzes);
    aggs_.crimes_in += static_cast<std::size_t>(std::count_if(parse_drops.begin(), parse_drops.end(),
                                                              [](const DropRecord& d) { return d.source == "crime"; }));
    aggs_.blitzes_in += parse_drops.size() - static_cast<std::size_t>(std::count_if(
                                                 parse_drops.begin(), parse_drops.end(),
                                                 [](const DropRecord& d) { return d.source == "crime"; }));
    aggs_.drops.insert(aggs_.drops.begin(), parse_drops.begin(), parse_drops.end());

    nlohmann::json by_reason = nlohmann::json::object();
    for (const auto& d : aggs_.drops) {
      const std::string key = d.source + "." + to_string(d.reason);
      by_reason[key] = by_reason.value(key, 0) + 1;
    }
    stages_["ingest"] = {{"crimes_in", aggs_.crimes_in},
                         {"blitzes_in", aggs_.blitzes_in},
                         {"crimes_dropped", aggs_.dropped("crime")},
                         {"blitzes_dropped", aggs_.dropped("blitz")},
                         {"drops_by_reason", by_reason},
                         {"cell_periods_with_data", aggs_.rows.size()},
                         {"violent_crimes", aggs_.total_violent()}};
    log(1, "ingest: " + std::to_string(aggs_.rows.size()) + " active cell-periods, " +
               std::to_string(aggs_.drops.size()) + " records dropped");
    if (write) {
      std::ostringstream a, d;
      a << csv_head();
      write_aggregates_csv(a, aggs_);
      d << csv_head();
      write_drops_csv(d, aggs_.drops);
      put("ingest/aggregates.csv", a.str());
      put("ingest/drops.csv", d.str());
      put_json("ingest/summary.json", stages_["ingest"]);
    }
  }

  void panel_stage(bool write) {
    stage_ = "panel";
    panel_ = assemble(grid_, aggs_, cfg_.start_day, cfg_.n_days);
    std::size_t treated = 0;
    double hours = 0.0, outcome = 0.0;
    const auto blitz = panel_.column("blitz");
    for (std::size_t r = 0; r < panel_.n_rows(); ++r)
      if (blitz[r] > 0.0) {
        ++treated;
        hours += blitz[r];
        outcome += panel_.crime()[r];
      }
    treated_ = static_cast<double>(treated);
    mean_hours_ = treated ? hours / treated_ : 0.0;
    mean_treated_outcome_ = treated ? outcome / treated_ : 0.0;
    stages_["panel"] = {{"rows", panel_.n_rows()},
                        {"cells", panel_.n_cells()},
                        {"days", panel_.n_days()},
                        {"treated_cell_periods", treated},
                        {"mean_treated_hours", mean_hours_},
                        {"mean_treated_outcome", mean_treated_outcome_}};
    log(1, "panel: " + std::to_string(panel_.n_rows()) + " rows");
    if (write) {
      const auto dir = cfg_.output_dir / "panel";
      std::filesystem::create_directories(dir);
      auto doc = write_panel(panel_, dir / "panel");
      outputs_["panel/panel.bin"] = sha256_hex(read_file(dir / "panel.bin"));
      put_json("panel/panel.json", doc);
    }
  }

  void weights_stage(bool write) {
    stage_ = "weights";
    weights_.clear();
    nlohmann::json summary = nlohmann::json::object();
    for (const auto& e : cfg_.weights) {
      std::optional<double> cutoff;
      if (e.scheme == WeightScheme::InverseDistance) cutoff = e.cutoff_m;
      auto w = build_weights(grid_, e.scheme, cutoff, cfg_.row_standardize);
      summary[e.label()] = {{"scheme", to_string(e.scheme)}, {"avg_neighbor_count", w.avg_neighbor_count}, {"nonzeros", w.nonzeros()}};
      if (cutoff) summary[e.label()]["cutoff_m"] = *cutoff;
      if (write) {
        std::ostringstream s;
        s << csv_head();
        write_weights_csv(s, w);
        put("weights/" + e.label() + ".csv", s.str());
      }
      weights_.emplace_back(e, std::move(w));
    }
    stages_["weights"] = summary;
    if (write) put_json("weights/summary.json", summary);
  }

  void fit_stage(bool write) {
    stage_ = "fit";
    std::vector<GeoPoint> centroids;
    for (const auto& c : grid_.cells()) centroids.push_back(c.centroid);
    fits_.clear();
    nlohmann::json summary = nlohmann::json::object();
    FitOptions fo;
    fo.threads = threads_;
    std::string all_dropped;
    for (const auto& [entry, w] : weights_) {
      const std::string label = entry.label();
      add_model_columns(panel_, &w, cfg_.lags, cfg_.interactions);
      ModelSpec spec;
      spec.regressors = {"blitz", "blitz_sq", "w_blitz"};
      for (int j : cfg_.lags) spec.regressors.push_back(lag_name("blitz", j));
      for (const auto& [a, b] : cfg_.interactions) spec.regressors.push_back(interaction_name(a, b));
      spec.fe_dims = cfg_.fe_dims;
      if (cfg_.conley) {
        const double cut = entry.scheme == WeightScheme::BinaryContiguity ? cfg_.contiguity_conley_m : entry.cutoff_m;
        spec.vcov.push_back({VcovKind::ConleySpatial, cut});
      }
      Design d = make_design(panel_, spec, centroids);
      log(1, "fit " + label + ": " + std::to_string(d.n()) + " rows in the estimation sample");
      FitResult fit = fit_fe_poisson(d, spec, fo);
      auto j = fit_to_json(fit);
      j["label"] = label;
      j["weights"] = {{"scheme", to_string(entry.scheme)}, {"avg_neighbor_count", w.avg_neighbor_count}};
      if (entry.scheme == WeightScheme::InverseDistance) j["weights"]["cutoff_m"] = entry.cutoff_m;
      if (write) put_json("fits/" + label + ".json", j);
      summary[label] = {{"n_obs_used", fit.n_obs_used}, {"dropped_rows", fit.dropped_rows},
                        {"dropped_groups", fit.dropped_groups.size()}, {"converged", fit.converged}};
      if (fit.n_obs_used == 0) all_dropped = fit.message;
      std::string conley_label;
      for (const auto& [vs, v] : fit.vcovs)
        if (vs.kind == VcovKind::ConleySpatial) conley_label = vs.label();
      fits_.push_back({label, std::move(fit), w.avg_neighbor_count, conley_label});
    }
    stages_["fit"] = summary;
    if (!all_dropped.empty()) throw StageFailure(all_dropped);
    if (write) {
      std::vector<TableColumn> cols;
      for (const auto& f : fits_) cols.push_back({f.label, &f.fit, f.conley_label});
      std::ostringstream s;
      s << csv_head();
      write_regression_table(s, cols);
      put("tables/regression_table.csv", s.str());
    }
  }

  void effects_stage() {
    stage_ = "effects";
    const FitEntry* chosen = nullptr;
    for (const auto& f : fits_)
      if (f.label == cfg_.effects_fit) chosen = &f;
    if (!cfg_.effects_fit.empty() && !chosen) throw InputError("effects.fit names no fit: " + cfg_.effects_fit);
    if (!chosen)
      for (const auto& f : fits_)
        if (f.label == "idw_1000m") chosen = &f;
    if (!chosen) chosen = &fits_.front();
    const auto& fit = chosen->fit;
    EffectInputs in;
    in.delta = fit.coefficient("blitz");
    in.theta = fit.coefficient("blitz_sq");
    in.rho = fit.coefficient("w_blitz");
    in.avg_neighbors = chosen->avg_neighbors;
    for (int j : cfg_.lags) in.lags[j] = fit.coefficient(lag_name("blitz", j));
    in.treated_cell_periods = treated_;
    in.avg_treated_outcome = mean_treated_outcome_;
    in.mean_treated_hours = mean_hours_;
    write_effects(in, chosen->label);
  }

  void effects_from_inputs() {
    stage_ = "effects";
    write_effects(*cfg_.effects_inputs, "");
  }

  void write_effects(const EffectInputs& in, const std::string& label) {
    auto rep = compute_effects(in, cfg_.cost_benefit);
    auto j = effects_to_json(rep);
    if (!label.empty()) j["fit"] = label;
    put_json("effects/effects.json", j);
    std::ostringstream t, d;
    write_effects_text(t, rep);
    put("effects/effects.txt", "run_id: " + run_id_ + "\n" + t.str());
    d << csv_head();
    write_dose_response_csv(d, in.delta, in.theta);
    put("effects/dose_response.csv", d.str());
    stages_["effects"] = {{"fit", label}, {"direct_pct", rep.direct_pct}};
    if (opt_.command == "effects" || opt_.verbosity > 0) std::cout << t.str();
  }

  void simulate_stage() {
    stage_ = "simulate";
    const DGPConfig& c = *cfg_.sim;
    auto ds = simulate(c, nullptr, threads_);
    auto rec = to_records(ds);
    std::ostringstream cs, bs;
    cs << csv_head();
    write_crimes_csv(cs, rec.crimes);
    bs << csv_head();
    write_blitzes_csv(bs, rec.blitzes);
    put("sim/crimes.csv", cs.str());
    put("sim/blitzes.csv", bs.str());
    put_json("sim/boundary.geojson", polygon_to_geojson(ds.geometry->boundary));
    put_json("sim/truth.json", truth_json(ds));
    // Ready-to-run pipeline config over the generated files.
    nlohmann::json pc = canonical_json(cfg_);
    pc.erase("sim");
    pc["paths"] = {{"boundary", "boundary.geojson"}, {"crimes", "crimes.csv"}, {"blitzes", "blitzes.csv"}, {"output_dir", "pipeline"}};
    pc["grid"]["nominal_cell_area_km2"] = c.cell_area_km2;
    pc["window"] = {{"start_date", format_date(c.start_day)}, {"n_days", c.n_days}};
    put("sim/pipeline_config.json", pc.dump(2) + "\n");
    stages_["simulate"] = {{"cells", ds.geometry->grid.size()}, {"rows", ds.panel.n_rows()},
                           {"crimes", rec.crimes.size()}, {"blitzes", rec.blitzes.size()}};
    log(1, "simulate: " + std::to_string(rec.crimes.size()) + " crimes, " + std::to_string(rec.blitzes.size()) + " blitzes");
  }

  void report_stage() {
    stage_ = "report";
    const auto dir = cfg_.output_dir;
    std::vector<std::filesystem::path> fit_files;
    if (std::filesystem::is_directory(dir / "fits"))
      for (const auto& e : std::filesystem::directory_iterator(dir / "fits"))
        if (e.path().extension() == ".json") fit_files.push_back(e.path());
    std::sort(fit_files.begin(), fit_files.end());
    if (fit_files.empty() && !std::filesystem::exists(dir / "effects/effects.json"))
      throw InputError("no fits or effects found under " + dir.string() + "; run pipeline first");
    std::ostringstream out;
    char buf[256];
    for (const auto& f : fit_files) {
      nlohmann::json j = nlohmann::json::parse(read_file(f));
      out << "== " << j.value("label", f.stem().string()) << " (run " << j.value("run_id", "") << ")\n";
      std::snprintf(buf, sizeof buf, "observations %zu, BIC %.1f, converged %s\n", j["n_obs_used"].get<std::size_t>(),
                    j["bic"].get<double>(), j["convergence"]["converged"].get<bool>() ? "yes" : "no");
      out << buf;
      for (const auto& t : j["terms"]) {
        const auto name = t.get<std::string>();
        const double b = j["coefficients"][name].get<double>();
        out << "  ";
        std::snprintf(buf, sizeof buf, "%-22s %+.5f", name.c_str(), b);
        out << buf;
        for (const auto& [lab, m] : j["se"].items()) {
          std::snprintf(buf, sizeof buf, "  %s %.5f", lab.c_str(), m[name].get<double>());
          out << buf;
        }
        out << '\n';
      }
    }
    if (std::filesystem::exists(dir / "effects/effects.txt")) out << "== effects\n" << read_file(dir / "effects/effects.txt");
    put("report/report.txt", out.str());
    std::cout << out.str();
  }

  struct FitEntry {
    std::string label;
    FitResult fit;
    double avg_neighbors = 0.0;
    std::string conley_label;
  };

  CommandOptions opt_;
  RunConfig cfg_;
  int threads_ = 1;
  std::string stage_, status_ = "failed", error_, failed_stage_, started_;
  std::string run_id_, config_hash_;
  nlohmann::json inputs_ = nlohmann::json::object();
  nlohmann::json stages_ = nlohmann::json::object();
  std::map<std::string, std::string> outputs_;

  HexGrid grid_;
  StudyWindow window_;
  Aggregates aggs_;
  Panel panel_;
  double treated_ = 0.0, mean_hours_ = 0.0, mean_treated_outcome_ = 0.0;
  std::vector<std::pair<WeightEntry, WeightMatrix>> weights_;
  std::vector<FitEntry> fits_;
};

}  // namespace blitzeval
