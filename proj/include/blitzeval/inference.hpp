#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include "blitzeval/error.hpp"
#include "blitzeval/geo.hpp"

namespace blitzeval {

// Everything a sandwich estimator needs from a fit: per-observation scores
// (demeaned regressors times working residual) and the inverse Hessian.
struct ScoreData {
  Eigen::MatrixXd scores;  // n x k
  Eigen::MatrixXd bread;   // k x k
  std::vector<std::int32_t> cell;  // per observation
  std::vector<std::int32_t> time;  // flattened day-period index

  Eigen::Index n_obs() const { return scores.rows(); }
  Eigen::Index n_coef() const { return scores.cols(); }
};

struct VcovMatrix {
  Eigen::MatrixXd matrix;
  bool psd_repaired = false;
};

// Clips negative eigenvalues to zero. Returns true if anything was clipped.
inline bool psd_repair(Eigen::MatrixXd& v) {
  v = 0.5 * (v + v.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v);
  Eigen::VectorXd ev = es.eigenvalues();
  const double tol = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() >= -tol) return false;
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = std::max(ev[i], 0.0);
  v = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  v = 0.5 * (v + v.transpose()).eval();
  return true;
}

namespace detail {

// sum_g (sum_{i in g} s_i)(sum_{i in g} s_i)' and the number of groups.
inline Eigen::MatrixXd cluster_meat(const Eigen::MatrixXd& scores, std::span<const std::int32_t> ids, int* n_groups) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  const Eigen::Index k = scores.cols();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd acc(k);
  int groups = 0;
  for (std::size_t p = 0; p < order.size();) {
    const std::int32_t g = ids[order[p]];
    acc.setZero();
    for (; p < order.size() && ids[order[p]] == g; ++p) acc += scores.row(static_cast<Eigen::Index>(order[p])).transpose();
    meat.noalias() += acc * acc.transpose();
    ++groups;
  }
  *n_groups = groups;
  return meat;
}

inline Eigen::MatrixXd sandwich(const Eigen::MatrixXd& bread, const Eigen::MatrixXd& meat, double factor) {
  Eigen::MatrixXd v = factor * bread * meat * bread;
  return 0.5 * (v + v.transpose());
}

}  // namespace detail

// Heteroskedasticity-robust sandwich with factor n / (n - 1).
inline VcovMatrix vcov_robust(const ScoreData& sd) {
  const double n = static_cast<double>(sd.n_obs());
  if (n < 2) throw DegenerateVcov("robust vcov needs at least two observations");
  Eigen::MatrixXd meat = sd.scores.transpose() * sd.scores;
  return {detail::sandwich(sd.bread, meat, n / (n - 1.0)), false};
}

// Cluster-robust sandwich, small-sample factor G / (G - 1).
inline VcovMatrix vcov_cluster(const ScoreData& sd, std::span<const std::int32_t> cluster_ids) {
  if (cluster_ids.size() != static_cast<std::size_t>(sd.n_obs()))
    throw DimensionError("cluster ids do not match the number of observations");
  int g = 0;
  Eigen::MatrixXd meat = detail::cluster_meat(sd.scores, cluster_ids, &g);
  if (g < 2) throw DegenerateVcov("cluster vcov needs at least two clusters");
  return {detail::sandwich(sd.bread, meat, g / (g - 1.0)), false};
}

inline VcovMatrix vcov_cluster(const ScoreData& sd) { return vcov_cluster(sd, sd.cell); }

// Unordered cell pairs (a < b) whose centroids are within cutoff_m.
inline std::vector<std::vector<std::int32_t>> neighbors_within(std::span<const GeoPoint> centroids, double cutoff_m) {
  const std::size_t n = centroids.size();
  std::vector<std::vector<std::int32_t>> nb(n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return centroids[a].lat < centroids[b].lat; });
  // Latitude band in degrees; a hair wider than the cutoff.
  const double band = rad2deg(cutoff_m / kEarthRadiusM) * (1.0 + 1e-9) + 1e-12;
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t a = order[p];
    for (std::size_t q = p + 1; q < n && centroids[order[q]].lat - centroids[a].lat <= band; ++q) {
      const std::size_t b = order[q];
      if (great_circle_distance(centroids[a], centroids[b]) <= cutoff_m) {
        nb[a].push_back(static_cast<std::int32_t>(b));
        nb[b].push_back(static_cast<std::int32_t>(a));
      }
    }
  }
  for (auto& row : nb) std::sort(row.begin(), row.end());
  return nb;
}

// Spatial HAC (Conley) sandwich with a uniform kernel:
//   meat = sum_cells (sum_t s)(sum_t s)'                       (same cell, any time)
//        + sum_t sum_{c != c', d(c,c') <= cutoff} S_ct S_c't'  (same time, nearby cells)
// scaled by G / (G - 1), G the number of distinct cells. Negative
// eigenvalues are clipped and flagged.
inline VcovMatrix vcov_conley(const ScoreData& sd, std::span<const GeoPoint> centroids, double cutoff_m) {
  if (!(cutoff_m >= 0.0)) throw InvalidParameter("Conley cutoff must be nonnegative");
  const std::size_t n = static_cast<std::size_t>(sd.n_obs());
  if (sd.cell.size() != n || sd.time.size() != n) throw DimensionError("Conley vcov needs cell and time per observation");
  for (auto c : sd.cell) {
    if (c < 0 || static_cast<std::size_t>(c) >= centroids.size() || !centroids[static_cast<std::size_t>(c)].valid())
      throw ConsistencyError("observation references cell " + std::to_string(c) + " without a centroid");
  }
  int g = 0;
  Eigen::MatrixXd meat = detail::cluster_meat(sd.scores, sd.cell, &g);
  if (g < 2) throw DegenerateVcov("Conley vcov needs at least two cells");

  const auto nb = neighbors_within(centroids, cutoff_m);
  bool any_pairs = false;
  for (const auto& r : nb) any_pairs = any_pairs || !r.empty();

  if (any_pairs) {
    const Eigen::Index k = sd.n_coef();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return sd.time[a] != sd.time[b] ? sd.time[a] < sd.time[b] : sd.cell[a] < sd.cell[b];
    });
    std::vector<std::int32_t> slot(centroids.size(), -1);
    std::vector<std::int32_t> slice_cells;
    Eigen::MatrixXd slice_sum;  // one row per distinct cell in the slice
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd near(k);
    for (std::size_t p = 0; p < n;) {
      const std::int32_t t = sd.time[order[p]];
      std::size_t end = p;
      while (end < n && sd.time[order[end]] == t) ++end;
      slice_cells.clear();
      slice_sum.setZero(static_cast<Eigen::Index>(end - p), k);
      for (std::size_t q = p; q < end; ++q) {
        const std::size_t i = order[q];
        const std::int32_t c = sd.cell[i];
        if (slot[static_cast<std::size_t>(c)] < 0) {
          slot[static_cast<std::size_t>(c)] = static_cast<std::int32_t>(slice_cells.size());
          slice_cells.push_back(c);
        }
        slice_sum.row(slot[static_cast<std::size_t>(c)]) += sd.scores.row(static_cast<Eigen::Index>(i));
      }
      for (std::size_t a = 0; a < slice_cells.size(); ++a) {
        near.setZero();
        bool hit = false;
        for (auto c2 : nb[static_cast<std::size_t>(slice_cells[a])]) {
          const std::int32_t b = slot[static_cast<std::size_t>(c2)];
          if (b >= 0) {
            near += slice_sum.row(b).transpose();
            hit = true;
          }
        }
        if (hit) cross.noalias() += slice_sum.row(static_cast<Eigen::Index>(a)).transpose() * near.transpose();
      }
      for (auto c : slice_cells) slot[static_cast<std::size_t>(c)] = -1;
      p = end;
    }
    meat += 0.5 * (cross + cross.transpose());
  }

  VcovMatrix out{detail::sandwich(sd.bread, meat, g / (g - 1.0)), false};
  out.psd_repaired = psd_repair(out.matrix);
  return out;
}

struct WaldResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

// W = b' V^-1 b, chi-square with dim(b) degrees of freedom.
inline WaldResult wald_test(const Eigen::VectorXd& b, const Eigen::MatrixXd& v) {
  if (b.size() == 0) throw InvalidParameter("Wald test needs a nonempty coefficient subset");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (v + v.transpose()));
  const auto& ev = es.eigenvalues();
  if (ev.minCoeff() <= 1e-14 * std::max(1e-300, ev.cwiseAbs().maxCoeff()))
    throw SingularityError("", "Wald test: covariance of the coefficient subset is singular");
  Eigen::VectorXd proj = es.eigenvectors().transpose() * b;
  double w = 0.0;
  for (Eigen::Index i = 0; i < proj.size(); ++i) w += proj[i] * proj[i] / ev[i];
  WaldResult r;
  r.statistic = w;
  r.dof = static_cast<int>(b.size());
  r.p_value = boost::math::gamma_q(0.5 * r.dof, 0.5 * w);
  return r;
}

}  // namespace blitzeval
