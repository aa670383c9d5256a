#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "blitzeval/ingest.hpp"
#include "blitzeval/simkit.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("blitzeval_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args) const {
    Outcome r;
    const auto o = dir_ / "stdout.txt", e = dir_ / "stderr.txt";
    const std::string cmd = std::string("\"") + BLITZEVAL_BIN + "\" " + args + " > \"" + o.string() + "\" 2> \"" + e.string() + "\"";
    const int st = std::system(cmd.c_str());
    r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    r.out = slurp(o);
    r.err = slurp(e);
    return r;
  }

  // Simulate from the sample config into dir_/name and return the pipeline config path.
  fs::path simulate_into(const std::string& name) const {
    const auto cfg = dir_ / (name + ".json");
    json j = json::parse(slurp(fs::path(BLITZEVAL_SAMPLES) / "sim_config.json"));
    j["paths"]["output_dir"] = name;
    spit(cfg, j.dump(2));
    auto r = run("simulate --config \"" + cfg.string() + "\"");
    EXPECT_EQ(r.code, 0) << r.err;
    return dir_ / name / "sim" / "pipeline_config.json";
  }

  fs::path dir_;
};

const char* kSquare = R"({"type":"Polygon","coordinates":[[[-38.56,-3.76],[-38.54,-3.76],[-38.54,-3.74],[-38.56,-3.74],[-38.56,-3.76]]]})";

}  // namespace

TEST_F(Cli, MissingConfigFileIsInputError) {
  auto r = run("grid --config \"" + (dir_ / "nope.json").string() + "\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("cannot open config"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownKeyAndMissingSimBlockAreInputErrors) {
  spit(dir_ / "bad.json", R"({"paths":{"output_dir":"o"},"modle":{}})");
  EXPECT_EQ(run("grid --config \"" + (dir_ / "bad.json").string() + "\"").code, 2);
  spit(dir_ / "nosim.json", R"({"paths":{"output_dir":"o"}})");
  auto r = run("simulate --config \"" + (dir_ / "nosim.json").string() + "\"");
  EXPECT_EQ(r.code, 2);
  auto m = json::parse(slurp(dir_ / "o" / "simulate.manifest.json"));
  EXPECT_EQ(m["status"], "failed");
  EXPECT_EQ(m["failed_stage"], "inputs");
}

TEST_F(Cli, MissingBoundaryFileIsInputError) {
  spit(dir_ / "c.json", R"({"paths":{"boundary":"missing.geojson","output_dir":"o"}})");
  EXPECT_EQ(run("grid --config \"" + (dir_ / "c.json").string() + "\"").code, 2);
}

TEST_F(Cli, BadThreadsEnvironmentIsInputError) {
  spit(dir_ / "b.geojson", kSquare);
  spit(dir_ / "c.json", R"({"paths":{"boundary":"b.geojson","output_dir":"o"}})");
  const auto cfg = (dir_ / "c.json").string();
  EXPECT_EQ(run("grid --config \"" + cfg + "\"").code, 0);
  ASSERT_EQ(setenv("BLITZEVAL_THREADS", "many", 1), 0);
  auto bad = run("grid --config \"" + cfg + "\"");
  ASSERT_EQ(setenv("BLITZEVAL_THREADS", "2", 1), 0);
  auto ok = run("grid --config \"" + cfg + "\"");
  unsetenv("BLITZEVAL_THREADS");
  EXPECT_EQ(bad.code, 2);
  EXPECT_EQ(ok.code, 0);
}

TEST_F(Cli, GridPrintsCellCountAndWritesTable) {
  spit(dir_ / "b.geojson", kSquare);
  spit(dir_ / "c.json", R"({"paths":{"boundary":"b.geojson","output_dir":"o"}})");
  auto r = run("grid --config \"" + (dir_ / "c.json").string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(r.out.rfind("cells: ", 0), 0u) << r.out;
  const int n = std::stoi(r.out.substr(7));
  // ~2.2 km square at 0.126 km2 per cell.
  EXPECT_GT(n, 25);
  EXPECT_LT(n, 50);
  std::istringstream cells(slurp(dir_ / "o" / "grid" / "cells.csv"));
  std::string line;
  int rows = 0;
  while (std::getline(cells, line))
    if (!line.empty() && line[0] != '#') ++rows;
  EXPECT_EQ(rows, n + 1);  // plus header
  auto m = json::parse(slurp(dir_ / "o" / "grid.manifest.json"));
  EXPECT_EQ(m["status"], "ok");
  EXPECT_EQ(m["stages"]["grid"]["cells"].get<int>(), n);
  EXPECT_TRUE(m["outputs"].contains("grid/cells.csv"));
}

TEST_F(Cli, SimulateThenPipelineRecoversTheDirectEffect) {
  const auto pc = simulate_into("s");
  ASSERT_TRUE(fs::exists(pc));
  const auto sim = pc.parent_path();
  for (const char* f : {"crimes.csv", "blitzes.csv", "boundary.geojson", "truth.json"}) EXPECT_TRUE(fs::exists(sim / f)) << f;

  std::ifstream bin(sim / "blitzes.csv");
  std::vector<blitzeval::DropRecord> drops;
  auto blitzes = blitzeval::read_blitzes_csv(bin, drops);
  EXPECT_TRUE(drops.empty());
  ASSERT_FALSE(blitzes.empty());
  for (const auto& b : blitzes) {
    const double h = static_cast<double>(b.end.seconds - b.start.seconds) / 3600.0;
    EXPECT_GE(h, 0.5);
    EXPECT_LE(h, 8.0);
  }

  auto r = run("pipeline --config \"" + pc.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto out = sim / "pipeline";
  auto m = json::parse(slurp(out / "pipeline.manifest.json"));
  EXPECT_EQ(m["stages"]["ingest"]["crimes_dropped"].get<int>(), 0);
  EXPECT_EQ(m["stages"]["ingest"]["blitzes_dropped"].get<int>(), 0);

  int fits = 0;
  for (const auto& e : fs::directory_iterator(out / "fits")) fits += e.path().extension() == ".json";
  EXPECT_EQ(fits, 5);
  std::istringstream table(slurp(out / "tables" / "regression_table.csv"));
  std::string line;
  std::getline(table, line);
  if (line[0] == '#') std::getline(table, line);
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 5 * 4);

  auto truth = json::parse(slurp(sim / "truth.json"));
  auto fit = json::parse(slurp(out / "fits" / "idw_1000m.json"));
  const double b = fit["coefficients"]["blitz"].get<double>();
  const double se = fit["se"]["cluster"]["blitz"].get<double>();
  const double want = truth["coefficients"]["blitz"].get<double>();
  // Records -> ingest -> panel must give the same fit as the simulated panel itself.
  auto dgp = blitzeval::dgp_from_json(truth["config"]);
  auto ds = blitzeval::simulate(dgp);
  std::vector<int> lags;
  const auto terms = blitzeval::recovery_terms(dgp, {}, &lags);
  auto direct = blitzeval::fit_synthetic(ds, terms, lags, {});
  EXPECT_NEAR(b, direct.coefficient("blitz"), 1e-6);
  EXPECT_NEAR(fit["coefficients"]["w_blitz"].get<double>(), direct.coefficient("w_blitz"), 1e-6);
  EXPECT_LT(std::abs(b - want), 3 * se) << b << " vs " << want;
  EXPECT_TRUE(fs::exists(out / "effects" / "effects.json"));

  auto rep = run("report --out \"" + out.string() + "\"");
  EXPECT_EQ(rep.code, 0) << rep.err;
  EXPECT_NE(rep.out.find("idw_1000m"), std::string::npos);
}

TEST_F(Cli, EmptyCrimeFileFailsTheIngestStage) {
  const auto pc = simulate_into("s");
  spit(pc.parent_path() / "crimes.csv", "kind,lat,lon,timestamp\n");
  auto r = run("pipeline --config \"" + pc.string() + "\"");
  EXPECT_EQ(r.code, 1) << r.err;
  EXPECT_FALSE(r.err.empty());
  auto m = json::parse(slurp(pc.parent_path() / "pipeline" / "pipeline.manifest.json"));
  EXPECT_EQ(m["status"], "failed");
  EXPECT_FALSE(m["failed_stage"].get<std::string>().empty());
  EXPECT_FALSE(m["error"].get<std::string>().empty());
}

TEST_F(Cli, EffectsFromExplicitInputs) {
  spit(dir_ / "e.json", R"({"paths":{"output_dir":"o"},
    "effects":{"inputs":{"delta":-0.2808,"theta":0.0461,"rho":-0.0529,"avg_neighbors":17.1},
               "treated_cell_periods":6298,"avg_treated_outcome":0.0197,"effect_fraction":-0.3462}})");
  auto r = run("effects --config \"" + (dir_ / "e.json").string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = json::parse(slurp(dir_ / "o" / "effects" / "effects.json"));
  EXPECT_NEAR(j["direct_pct"].get<double>(), (std::exp(-0.2808 + 0.0461) - 1) * 100, 1e-9);
  EXPECT_EQ(j["cost"]["minor"].get<long long>(), 450000000LL);
}

TEST_F(Cli, RerunIsByteIdenticalApartFromTimestamps) {
  const auto pc = simulate_into("s");
  auto a = run("pipeline --config \"" + pc.string() + "\" --out \"" + (dir_ / "r1").string() + "\"");
  auto b = run("pipeline --config \"" + pc.string() + "\" --out \"" + (dir_ / "r2").string() + "\" --threads 2");
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  int compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir_ / "r1")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir_ / "r1");
    ASSERT_TRUE(fs::exists(dir_ / "r2" / rel)) << rel;
    if (rel.filename() == "pipeline.manifest.json") {
      auto x = json::parse(slurp(e.path())), y = json::parse(slurp(dir_ / "r2" / rel));
      x.erase("timestamps");
      y.erase("timestamps");
      EXPECT_EQ(x, y);
    } else {
      EXPECT_EQ(slurp(e.path()), slurp(dir_ / "r2" / rel)) << rel;
    }
    ++compared;
  }
  EXPECT_GT(compared, 15);
}
