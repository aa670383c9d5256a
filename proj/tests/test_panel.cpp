#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "blitzeval/panel.hpp"

using namespace blitzeval;

namespace {

const GeoPoint kCenter{-3.75, -38.55};

BlitzRecord blitz_at(GeoPoint p, DateTime s, DateTime e) {
  BlitzRecord b;
  b.location = p;
  b.start = s;
  b.end = e;
  b.officers = 5;
  b.police_vehicles = 1;
  return b;
}

// Small random panel with a blitz column; values are arbitrary but fixed.
Panel random_panel(std::size_t n_cells, int n_days, unsigned seed) {
  Panel p(n_cells, n_days, days_from_civil(2012, 1, 1));
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> c(0, 3);
  std::vector<double> h(p.n_rows());
  for (std::size_t r = 0; r < p.n_rows(); ++r) {
    p.crime()[r] = c(rng);
    h[r] = 0.5 * c(rng);
  }
  p.add_column("blitz", h);
  return p;
}

}  // namespace

TEST(Panel, RowCountAndLayout) {
  Panel p(17, 10, days_from_civil(2012, 1, 1));
  EXPECT_EQ(p.n_rows(), 17u * 10u * 4u);
  for (std::size_t r = 0; r < p.n_rows(); ++r) {
    EXPECT_EQ(p.row(static_cast<std::size_t>(p.cell_of(r)), p.day_of(r), p.period_of(r)), r);
    EXPECT_LT(p.group_a(r), 17 * 28);
  }
  EXPECT_EQ(p.dow_of(p.row(0, 0, 0)), 0);  // 2012-01-01 was a Sunday
  EXPECT_EQ(p.dow_of(p.row(0, 8, 2)), 1);
  EXPECT_THROW(Panel(3, 0, 0), InvalidParameter);
}

TEST(Panel, FullStudyRowCount) {
  // 731 days, 4 periods per day.
  Panel p(3, 731, days_from_civil(2012, 1, 1));
  EXPECT_EQ(p.n_rows(), 3u * 2924u);
}

TEST(Panel, AssembleSumsCountsAndCapsHours) {
  auto grid = build_hex_grid(square_boundary(kCenter, 2000.0), 0.126);
  StudyWindow win{days_from_civil(2012, 1, 1), 5};
  const auto p0 = grid.cell(1).centroid;
  std::vector<CrimeEvent> crimes{{CrimeKind::Robbery, p0, make_datetime(2012, 1, 3, 19)},
                                 {CrimeKind::Murder, p0, make_datetime(2012, 1, 3, 23)}};
  std::vector<BlitzRecord> blitzes{blitz_at(p0, make_datetime(2012, 1, 3, 18), make_datetime(2012, 1, 3, 23)),
                                   blitz_at(p0, make_datetime(2012, 1, 3, 19), make_datetime(2012, 1, 3, 23))};
  auto aggs = aggregate(grid, win, crimes, blitzes);
  auto panel = assemble(grid, aggs, win.start_day, win.n_days);
  const auto r = panel.row(1, 2, static_cast<int>(Period::Night));
  EXPECT_EQ(panel.crime()[r], 2);
  EXPECT_EQ(panel.column("blitz")[r], 6.0);
  EXPECT_EQ(panel.column("blitz_sq")[r], 36.0);
  EXPECT_EQ(panel.column("officers")[r], 10.0);
  double total = 0;
  for (double v : panel.column("blitz")) total += v;
  EXPECT_EQ(total, 6.0);
  long crimes_total = 0;
  for (auto v : panel.crime()) crimes_total += v;
  EXPECT_EQ(crimes_total, 2);

  AssembleOptions lean;
  lean.attribute_columns = false;
  auto q = assemble(grid, aggs, win.start_day, win.n_days, lean);
  EXPECT_FALSE(q.has("officers"));
  EXPECT_TRUE(q.has("blitz_sq"));
}

TEST(Panel, AssembleRejectsForeignRows) {
  Aggregates a;
  CellPeriodAggregate row;
  row.cell = 9;
  a.rows.push_back(row);
  EXPECT_THROW(assemble(3, a, 0, 2), ConsistencyError);
}

TEST(TemporalLag, LagFourIsSamePeriodPreviousDay) {
  auto p = random_panel(5, 6, 1);
  auto l4 = temporal_lag(p, "blitz", 4);
  auto l1 = temporal_lag(p, "blitz", 1);
  auto src = p.column("blitz");
  for (std::size_t cell = 0; cell < 5; ++cell)
    for (int d = 0; d < 6; ++d)
      for (int t = 0; t < 4; ++t) {
        const auto r = p.row(cell, d, t);
        if (d == 0) {
          EXPECT_TRUE(std::isnan(l4[r]));
        } else {
          EXPECT_EQ(l4[r], src[p.row(cell, d - 1, t)]);
        }
        if (d == 0 && t == 0) {
          EXPECT_TRUE(std::isnan(l1[r]));
        } else if (t == 0) {
          // Dawn looks back to the previous night.
          EXPECT_EQ(l1[r], src[p.row(cell, d - 1, 3)]);
        } else {
          EXPECT_EQ(l1[r], src[p.row(cell, d, t - 1)]);
        }
      }
  EXPECT_THROW(temporal_lag(p, "blitz", 0), InvalidParameter);
  EXPECT_THROW(temporal_lag(p, "nope", 1), NameError);
}

TEST(TemporalLag, CompositionAddsOrders) {
  auto p = random_panel(4, 5, 2);
  Panel q = p;
  q.add_column("l2", temporal_lag(p, "blitz", 2));
  auto l2l3 = temporal_lag(q, "l2", 3);
  auto l5 = temporal_lag(p, "blitz", 5);
  for (std::size_t i = 0; i < l5.size(); ++i) {
    if (std::isnan(l5[i])) {
      EXPECT_TRUE(std::isnan(l2l3[i]));
    } else {
      EXPECT_EQ(l5[i], l2l3[i]);
    }
  }
}

TEST(SpatialLag, MatchesPerSliceDenseProduct) {
  auto grid = build_hex_grid(square_boundary(kCenter, 2500.0), 0.126);
  auto w = build_weights(grid, WeightScheme::InverseDistance, 1000.0, true);
  auto p = random_panel(grid.size(), 3, 3);
  auto wl = spatial_lag(p, w, "blitz");
  auto src = p.column("blitz");
  const std::size_t n = grid.size();
  for (std::size_t s = 0; s < p.n_slots(); ++s)
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0;
      for (const auto& nb : w.rows[i]) acc += nb.weight * src[s * n + static_cast<std::size_t>(nb.id)];
      EXPECT_NEAR(wl[s * n + i], acc, 1e-14);
    }
  auto small = random_panel(n + 1, 1, 4);
  EXPECT_THROW(spatial_lag(small, w, "blitz"), DimensionError);
}

TEST(Interaction, ElementwiseProductAndUnknownName) {
  auto p = random_panel(3, 2, 5);
  std::vector<double> z(p.n_rows());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<double>(i % 3);
  p.add_column("mobile", z);
  auto x = interaction(p, "blitz", "mobile");
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(x[i], p.column("blitz")[i] * z[i]);
  EXPECT_THROW(interaction(p, "blitz", "missing"), NameError);
}

TEST(ModelColumns, NamesAndOrder) {
  auto grid = build_hex_grid(square_boundary(kCenter, 1500.0), 0.126);
  auto w = build_weights(grid, WeightScheme::BinaryContiguity, std::nullopt, true);
  auto p = random_panel(grid.size(), 4, 6);
  p.add_column("officers", std::vector<double>(p.n_rows(), 2.0));
  auto names = add_model_columns(p, &w, {1, 4}, {{"blitz", "officers"}});
  std::vector<std::string> want{"w_blitz", "lag_blitz_1", "lag_blitz_4", "blitz_x_officers"};
  EXPECT_EQ(names, want);
  for (const auto& n : want) EXPECT_TRUE(p.has(n));
}

TEST(FeIds, GroupsHaveExpectedCardinality) {
  auto p = random_panel(6, 14, 7);
  auto a = panel_fe_ids(p, "cell_period_dow");
  auto b = panel_fe_ids(p, "day");
  std::set<int> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  EXPECT_EQ(sa.size(), 6u * 28u);
  EXPECT_EQ(sb.size(), 14u);
  EXPECT_THROW(panel_fe_ids(p, "bogus"), NameError);
}

TEST(PanelIO, BinaryRoundTrip) {
  auto p = random_panel(7, 3, 8);
  p.add_column("lag", temporal_lag(p, "blitz", 1));
  auto dir = std::filesystem::temp_directory_path() / "blitzeval_panel_io";
  std::filesystem::create_directories(dir);
  write_panel(p, dir / "panel");
  auto q = read_panel(dir / "panel.json");
  EXPECT_TRUE(p == q);
  std::filesystem::remove_all(dir);
}

TEST(PanelIO, RebuildIsIdempotent) {
  auto grid = build_hex_grid(square_boundary(kCenter, 2000.0), 0.126);
  StudyWindow win{days_from_civil(2012, 1, 1), 3};
  std::vector<CrimeEvent> crimes{{CrimeKind::Robbery, grid.cell(0).centroid, make_datetime(2012, 1, 2, 7)}};
  auto a1 = assemble(grid, aggregate(grid, win, crimes, {}), win.start_day, win.n_days);
  auto a2 = assemble(grid, aggregate(grid, win, crimes, {}), win.start_day, win.n_days);
  EXPECT_TRUE(a1 == a2);
  std::ostringstream s1, s2;
  write_panel_csv(s1, a1);
  write_panel_csv(s2, a2);
  EXPECT_EQ(s1.str(), s2.str());
}
