#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "blitzeval/estimator.hpp"
#include "blitzeval/hexgrid.hpp"
#include "oracles/dummy_poisson.hpp"
#include "oracles/random_design.hpp"

using namespace blitzeval;

namespace {

GeoPoint offset(GeoPoint p, double east_m, double north_m) {
  return {p.lat + rad2deg(north_m / kEarthRadiusM),
          p.lon + rad2deg(east_m / (kEarthRadiusM * std::cos(deg2rad(p.lat))))};
}

ScoreData random_scores(std::mt19937_64& rng, int n, int k, int n_cells, int n_times) {
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> cc(0, n_cells - 1), tt(0, n_times - 1);
  ScoreData sd;
  sd.scores.resize(n, k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) sd.scores(i, j) = nd(rng);
  Eigen::MatrixXd a = Eigen::MatrixXd::Random(k, k);
  sd.bread = a * a.transpose() + Eigen::MatrixXd::Identity(k, k);
  for (int i = 0; i < n; ++i) {
    sd.cell.push_back(cc(rng));
    sd.time.push_back(tt(rng));
  }
  return sd;
}

// Pairwise reference: (i, j) correlated when they share a cell, or share a
// time index and their cells lie within the cutoff.
Eigen::MatrixXd conley_explicit(const ScoreData& sd, const std::vector<GeoPoint>& centroids, double cutoff) {
  const auto n = sd.scores.rows(), k = sd.scores.cols();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto ci = sd.cell[static_cast<std::size_t>(i)], cj = sd.cell[static_cast<std::size_t>(j)];
      const bool same_time = sd.time[static_cast<std::size_t>(i)] == sd.time[static_cast<std::size_t>(j)];
      const bool near = great_circle_distance(centroids[static_cast<std::size_t>(ci)], centroids[static_cast<std::size_t>(cj)]) <= cutoff;
      if (ci == cj || (same_time && near)) meat += sd.scores.row(i).transpose() * sd.scores.row(j);
    }
  std::set<int> cells(sd.cell.begin(), sd.cell.end());
  const double g = static_cast<double>(cells.size());
  Eigen::MatrixXd v = g / (g - 1.0) * sd.bread * meat * sd.bread;
  return 0.5 * (v + v.transpose());
}

double max_rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST(ClusterVcov, MatchesExplicitSumWithThirtyClusters) {
  std::mt19937_64 rng(1);
  auto sd = random_scores(rng, 600, 3, 30, 10);
  auto v = vcov_cluster(sd, sd.cell);
  auto o = oracle::crve_explicit(sd.scores, sd.bread, sd.cell);
  EXPECT_LT(max_rel(v.matrix, o), 1e-10);
  EXPECT_FALSE(v.psd_repaired);
}

TEST(ClusterVcov, SingletonClustersEqualRobust) {
  std::mt19937_64 rng(2);
  auto sd = random_scores(rng, 200, 2, 5, 5);
  std::vector<std::int32_t> own(200);
  std::iota(own.begin(), own.end(), 0);
  EXPECT_LT(max_rel(vcov_cluster(sd, own).matrix, vcov_robust(sd).matrix), 1e-10);
}

TEST(ClusterVcov, LabelPermutationInvariant) {
  std::mt19937_64 rng(3);
  auto sd = random_scores(rng, 300, 3, 25, 5);
  std::vector<std::int32_t> perm(25);
  std::iota(perm.begin(), perm.end(), 100);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::int32_t> relabeled;
  for (auto c : sd.cell) relabeled.push_back(perm[static_cast<std::size_t>(c)]);
  EXPECT_LT(max_rel(vcov_cluster(sd, relabeled).matrix, vcov_cluster(sd, sd.cell).matrix), 1e-12);
}

TEST(ClusterVcov, SingleClusterIsDegenerate) {
  std::mt19937_64 rng(4);
  auto sd = random_scores(rng, 20, 2, 1, 3);
  EXPECT_THROW(vcov_cluster(sd, sd.cell), DegenerateVcov);
  std::vector<std::int32_t> short_ids(5, 0);
  EXPECT_THROW(vcov_cluster(sd, short_ids), DimensionError);
}

TEST(ClusterVcov, PoissonFitMatchesFullDummySandwich) {
  std::mt19937_64 rng(5);
  auto p = oracle::random_problem(rng, 700, 9, 10, 2);
  auto fit = fit_fe_poisson(p.design, p.spec);
  auto o = oracle::fit_dummy_poisson(p.design.y, p.design.X, p.design.fe);
  Eigen::MatrixXd h = o.z.transpose() * (o.z.array().colwise() * o.mu.array()).matrix();
  Eigen::MatrixXd scores = o.z.array().colwise() * (o.y - o.mu).array();
  std::vector<std::int32_t> cl;
  for (auto r : o.kept) cl.push_back(p.design.cluster[r]);
  Eigen::MatrixXd ov = oracle::crve_explicit(scores, h.inverse(), cl).topLeftCorner(2, 2);
  EXPECT_LT(max_rel(fit.vcov("cluster").matrix, ov), 1e-6);
}

TEST(ConleyVcov, ThreeCellHandComputed) {
  // Cells 0 and 1 are 300 m apart, cell 2 is far away. One regressor.
  std::vector<GeoPoint> cen{{-3.75, -38.55}, offset({-3.75, -38.55}, 300.0, 0.0), {-3.70, -38.50}};
  ScoreData sd;
  sd.scores.resize(6, 1);
  sd.scores << 1.0, -2.0, 0.5, 3.0, -1.0, 2.0;
  sd.cell = {0, 1, 2, 0, 1, 2};
  sd.time = {0, 0, 0, 1, 1, 1};
  sd.bread = Eigen::MatrixXd::Constant(1, 1, 0.5);
  // Same-cell sums: (1+3)^2 + (-2-1)^2 + (0.5+2)^2 = 16 + 9 + 6.25.
  // Cross terms 0~1 at t0: 2*(1*-2) = -4; at t1: 2*(3*-1) = -6.
  const double meat = 31.25 - 10.0;
  const double want = 1.5 * 0.25 * meat;
  auto v = vcov_conley(sd, cen, 500.0);
  EXPECT_NEAR(v.matrix(0, 0), want, 1e-12);
  EXPECT_NEAR(v.matrix(0, 0), conley_explicit(sd, cen, 500.0)(0, 0), 1e-12);
  EXPECT_FALSE(v.psd_repaired);
}

TEST(ConleyVcov, MatchesPairwiseSumOnGrid) {
  auto grid = build_hex_grid(square_boundary({-3.75, -38.55}, 3000.0), 0.126);
  std::vector<GeoPoint> cen;
  for (const auto& c : grid.cells()) cen.push_back(c.centroid);
  std::mt19937_64 rng(6);
  auto sd = random_scores(rng, 500, 2, static_cast<int>(cen.size()), 8);
  for (double cut : {500.0, 1000.0, 1500.0}) {
    auto v = vcov_conley(sd, cen, cut);
    auto o = conley_explicit(sd, cen, cut);
    if (!v.psd_repaired) {
      EXPECT_LT(max_rel(v.matrix, o), 1e-10) << cut;
    }
  }
}

TEST(ConleyVcov, SubSpacingCutoffEqualsCluster) {
  auto grid = build_hex_grid(square_boundary({-3.75, -38.55}, 2500.0), 0.126);
  std::vector<GeoPoint> cen;
  for (const auto& c : grid.cells()) cen.push_back(c.centroid);
  std::mt19937_64 rng(7);
  auto sd = random_scores(rng, 400, 2, static_cast<int>(cen.size()), 6);
  auto v = vcov_conley(sd, cen, 0.5 * grid.spacing_m());
  EXPECT_LT(max_rel(v.matrix, vcov_cluster(sd, sd.cell).matrix), 1e-12);
}

TEST(ConleyVcov, ZeroCutoffSingletonTimesEqualsRobust) {
  std::vector<GeoPoint> cen;
  for (int i = 0; i < 50; ++i) cen.push_back(offset({-3.75, -38.55}, 250.0 * (i % 10), 250.0 * (i / 10)));
  std::mt19937_64 rng(8);
  auto sd = random_scores(rng, 50, 2, 50, 50);
  std::iota(sd.cell.begin(), sd.cell.end(), 0);
  std::iota(sd.time.begin(), sd.time.end(), 0);
  EXPECT_LT(max_rel(vcov_conley(sd, cen, 0.0).matrix, vcov_robust(sd).matrix), 1e-10);
}

TEST(ConleyVcov, RepairedMatrixIsPsd) {
  auto grid = build_hex_grid(square_boundary({-3.75, -38.55}, 3000.0), 0.126);
  std::vector<GeoPoint> cen;
  for (const auto& c : grid.cells()) cen.push_back(c.centroid);
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    auto sd = random_scores(rng, 60, 3, static_cast<int>(cen.size()), 2);
    auto v = vcov_conley(sd, cen, 1500.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v.matrix);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()));
    EXPECT_LT((v.matrix - v.matrix.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ConleyVcov, RejectsBadInputs) {
  std::mt19937_64 rng(10);
  auto sd = random_scores(rng, 20, 1, 3, 2);
  std::vector<GeoPoint> cen{{-3.75, -38.55}, {-3.76, -38.55}};
  EXPECT_THROW(vcov_conley(sd, cen, 500.0), ConsistencyError);
  cen.push_back({-3.77, -38.55});
  EXPECT_THROW(vcov_conley(sd, cen, -1.0), InvalidParameter);
}

TEST(Wald, SingleCoefficientIsSquaredZ) {
  std::mt19937_64 rng(11);
  auto p = oracle::random_problem(rng, 500, 8, 8, 3);
  auto fit = fit_fe_poisson(p.design, p.spec);
  auto w = wald_joint_test(fit, {"x1"});
  const double z = fit.coefficient("x1") / fit.se("x1");
  EXPECT_NEAR(w.statistic, z * z, 1e-10 * std::max(1.0, z * z));
  EXPECT_EQ(w.dof, 1);
  EXPECT_NEAR(w.p_value, normal_p_value(z), 1e-10);
}

TEST(Wald, JointStatisticMatchesQuadraticForm) {
  Eigen::VectorXd b(2);
  b << 0.3, -0.2;
  Eigen::MatrixXd v(2, 2);
  v << 0.04, 0.01, 0.01, 0.09;
  auto w = wald_test(b, v);
  const double want = b.dot(v.inverse() * b);
  EXPECT_NEAR(w.statistic, want, 1e-12);
  EXPECT_NEAR(w.p_value, std::exp(-want / 2.0), 1e-12);  // chi-square with 2 dof
  EXPECT_THROW(wald_test(Eigen::VectorXd(), v), InvalidParameter);
  Eigen::MatrixXd sing = Eigen::MatrixXd::Ones(2, 2);
  EXPECT_THROW(wald_test(b, sing), SingularityError);
}

TEST(Psd, RepairClipsNegativeEigenvalues) {
  Eigen::MatrixXd m(2, 2);
  m << 1.0, 2.0, 2.0, 1.0;
  EXPECT_TRUE(psd_repair(m));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
  Eigen::MatrixXd ok = Eigen::MatrixXd::Identity(3, 3);
  EXPECT_FALSE(psd_repair(ok));
}
