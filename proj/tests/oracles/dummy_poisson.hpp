#pragma once

// Test-side reference: Poisson ML by plain Newton on the full design with
// one dummy column per fixed-effect level. Deliberately naive and dense.

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

struct DummyFit {
  Eigen::VectorXd beta;       // slopes only
  Eigen::VectorXd full_coef;  // slopes then dummies
  Eigen::MatrixXd z;          // full design on kept rows
  Eigen::VectorXd y, mu;
  std::vector<std::size_t> kept;
  int iterations = 0;
};

// Drops rows of FE groups whose outcome sums to zero, repeated to a fixed point.
inline std::vector<std::size_t> kept_rows(const std::vector<double>& y, const std::vector<std::vector<std::int32_t>>& fe) {
  std::vector<char> keep(y.size(), 1);
  for (bool again = true; again;) {
    again = false;
    for (const auto& ids : fe) {
      std::map<std::int32_t, double> sum;
      for (std::size_t i = 0; i < y.size(); ++i)
        if (keep[i]) sum[ids[i]] += y[i];
      for (std::size_t i = 0; i < y.size(); ++i)
        if (keep[i] && sum[ids[i]] == 0.0) {
          keep[i] = 0;
          again = true;
        }
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (keep[i]) out.push_back(i);
  return out;
}

inline DummyFit fit_dummy_poisson(const std::vector<double>& y_all, const Eigen::MatrixXd& x_all,
                                  const std::vector<std::vector<std::int32_t>>& fe) {
  DummyFit f;
  f.kept = kept_rows(y_all, fe);
  const auto n = static_cast<Eigen::Index>(f.kept.size());
  const auto k = x_all.cols();
  // Level lists; every dimension after the first loses its first level.
  std::vector<std::vector<std::int32_t>> levels(fe.size());
  for (std::size_t d = 0; d < fe.size(); ++d) {
    std::set<std::int32_t> s;
    for (auto i : f.kept) s.insert(fe[d][i]);
    levels[d].assign(s.begin(), s.end());
    if (d > 0 && !levels[d].empty()) levels[d].erase(levels[d].begin());
  }
  Eigen::Index n_dummy = 0;
  for (const auto& l : levels) n_dummy += static_cast<Eigen::Index>(l.size());
  f.z = Eigen::MatrixXd::Zero(n, k + n_dummy);
  f.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = f.kept[static_cast<std::size_t>(i)];
    f.y[i] = y_all[r];
    f.z.row(i).head(k) = x_all.row(static_cast<Eigen::Index>(r));
    Eigen::Index col = k;
    for (std::size_t d = 0; d < fe.size(); ++d) {
      for (std::size_t l = 0; l < levels[d].size(); ++l)
        if (fe[d][r] == levels[d][l]) f.z(i, col + static_cast<Eigen::Index>(l)) = 1.0;
      col += static_cast<Eigen::Index>(levels[d].size());
    }
  }
  const Eigen::Index p = f.z.cols();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  // Start the first-dimension dummies at log(mean y).
  const double m = f.y.mean();
  for (Eigen::Index j = k; j < k + static_cast<Eigen::Index>(levels[0].size()); ++j) b[j] = std::log(m);
  auto loglik = [&](const Eigen::VectorXd& bb) {
    Eigen::VectorXd eta = f.z * bb;
    return (f.y.array() * eta.array() - eta.array().exp()).sum();
  };
  double ll = loglik(b);
  for (int it = 0; it < 200; ++it) {
    f.iterations = it + 1;
    Eigen::VectorXd mu = (f.z * b).array().exp();
    Eigen::VectorXd grad = f.z.transpose() * (f.y - mu);
    Eigen::MatrixXd h = f.z.transpose() * (f.z.array().colwise() * mu.array()).matrix();
    Eigen::VectorXd step = h.ldlt().solve(grad);
    double t = 1.0;
    Eigen::VectorXd nb = b + step;
    double nll = loglik(nb);
    while (nll < ll - 1e-12 * std::abs(ll) && t > 1e-6) {
      t *= 0.5;
      nb = b + t * step;
      nll = loglik(nb);
    }
    b = nb;
    ll = nll;
    if (step.cwiseAbs().maxCoeff() * t < 1e-13) break;
  }
  f.full_coef = b;
  f.beta = b.head(k);
  f.mu = (f.z * b).array().exp();
  return f;
}

// Cluster sandwich by explicit double summation over same-cluster pairs:
// V = c * A^-1 (sum_i sum_j 1{g_i = g_j} s_i s_j') A^-1, c = G / (G - 1).
inline Eigen::MatrixXd crve_explicit(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& bread,
                                     const std::vector<std::int32_t>& cluster) {
  const auto n = scores.rows(), k = scores.cols();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (cluster[static_cast<std::size_t>(i)] == cluster[static_cast<std::size_t>(j)])
        for (Eigen::Index a = 0; a < k; ++a)
          for (Eigen::Index b = 0; b < k; ++b) meat(a, b) += scores(i, a) * scores(j, b);
  std::set<std::int32_t> g(cluster.begin(), cluster.end());
  const double c = static_cast<double>(g.size()) / (static_cast<double>(g.size()) - 1.0);
  Eigen::MatrixXd v = c * bread * meat * bread;
  return 0.5 * (v + v.transpose());
}

}  // namespace oracle
