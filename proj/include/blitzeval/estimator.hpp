#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "blitzeval/demean.hpp"
#include "blitzeval/error.hpp"
#include "blitzeval/geo.hpp"
#include "blitzeval/inference.hpp"
#include "blitzeval/panel.hpp"
#include "blitzeval/parallel.hpp"

namespace blitzeval {

enum class Family { Poisson, Linear };
enum class VcovKind { ClusterCell, ConleySpatial };

struct VcovSpec {
  VcovKind kind = VcovKind::ClusterCell;
  std::optional<double> cutoff_m;  // Conley only

  std::string label() const {
    if (kind == VcovKind::ClusterCell) return "cluster";
    char buf[48];
    std::snprintf(buf, sizeof buf, "conley_%g", cutoff_m.value_or(0.0));
    return buf;
  }
  void validate() const {
    if (kind == VcovKind::ConleySpatial && (!cutoff_m || !(*cutoff_m >= 0.0)))
      throw InvalidParameter("Conley vcov requires a nonnegative cutoff_m");
  }
};

struct ModelSpec {
  std::string outcome = "crime";
  std::vector<std::string> regressors;
  std::vector<std::string> fe_dims{"cell_period_dow", "day"};
  Family family = Family::Poisson;
  std::vector<VcovSpec> vcov{{VcovKind::ClusterCell, std::nullopt}};

  void validate() const {
    if (regressors.empty()) throw InvalidParameter("model needs at least one regressor");
    std::set<std::string> seen;
    for (const auto& r : regressors)
      if (!seen.insert(r).second) throw InvalidParameter("duplicate regressor: " + r);
    if (fe_dims.empty()) throw InvalidParameter("model needs at least one fixed-effect dimension");
    for (const auto& v : vcov) v.validate();
  }
};

// Estimation sample in matrix form. Rows with any missing outcome or
// regressor value are already excluded.
struct Design {
  std::vector<double> y;
  Eigen::MatrixXd X;
  std::vector<std::string> names;
  std::vector<std::string> fe_names;
  std::vector<std::vector<std::int32_t>> fe;
  std::vector<std::int32_t> cluster;
  std::vector<std::int32_t> cell;
  std::vector<std::int32_t> time;
  std::vector<GeoPoint> centroids;  // indexed by cell id; needed for Conley
  std::vector<std::size_t> source_row;

  std::size_t n() const { return y.size(); }
};

inline Design make_design(const Panel& p, const ModelSpec& spec, std::vector<GeoPoint> centroids = {}) {
  spec.validate();
  const std::vector<double> y = p.values(spec.outcome);
  std::vector<std::span<const double>> cols;
  std::vector<double> crime_copy;
  for (const auto& r : spec.regressors) {
    if (r == "crime") {
      crime_copy = p.values("crime");
      cols.emplace_back(crime_copy);
    } else {
      cols.push_back(p.column(r));
    }
  }
  std::vector<std::vector<std::int32_t>> fe_all;
  for (const auto& d : spec.fe_dims) fe_all.push_back(panel_fe_ids(p, d));

  Design d;
  d.names = spec.regressors;
  d.fe_names = spec.fe_dims;
  d.centroids = std::move(centroids);
  for (std::size_t r = 0; r < p.n_rows(); ++r) {
    bool ok = std::isfinite(y[r]);
    for (const auto& c : cols) ok = ok && std::isfinite(c[r]);
    if (ok) d.source_row.push_back(r);
  }
  const std::size_t n = d.source_row.size();
  d.y.resize(n);
  d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  d.fe.assign(fe_all.size(), std::vector<std::int32_t>(n));
  d.cluster.resize(n);
  d.cell.resize(n);
  d.time.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = d.source_row[i];
    d.y[i] = y[r];
    for (std::size_t k = 0; k < cols.size(); ++k) d.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = cols[k][r];
    for (std::size_t f = 0; f < fe_all.size(); ++f) d.fe[f][i] = fe_all[f][r];
    d.cell[i] = p.cell_of(r);
    d.cluster[i] = d.cell[i];
    d.time[i] = p.slot_of(r);
  }
  return d;
}

// Generic rectangular table: named double columns (integer ids stored as doubles).
struct DataTable {
  std::vector<std::pair<std::string, std::vector<double>>> columns;

  void add(const std::string& name, std::vector<double> v) { columns.emplace_back(name, std::move(v)); }
  const std::vector<double>& get(const std::string& name) const {
    for (const auto& c : columns)
      if (c.first == name) return c.second;
    throw NameError("unknown table column: " + name);
  }
  std::size_t rows() const { return columns.empty() ? 0 : columns.front().second.size(); }
};

// FE dims and the cluster column name integer-valued columns of the table.
inline Design make_design(const DataTable& t, const ModelSpec& spec, const std::string& cluster_column) {
  spec.validate();
  const auto& y = t.get(spec.outcome);
  std::vector<const std::vector<double>*> cols;
  for (const auto& r : spec.regressors) cols.push_back(&t.get(r));
  std::vector<const std::vector<double>*> fes;
  for (const auto& f : spec.fe_dims) fes.push_back(&t.get(f));
  const auto& cl = t.get(cluster_column);

  Design d;
  d.names = spec.regressors;
  d.fe_names = spec.fe_dims;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    bool ok = std::isfinite(y[r]) && std::isfinite(cl[r]);
    for (auto* c : cols) ok = ok && std::isfinite((*c)[r]);
    for (auto* f : fes) ok = ok && std::isfinite((*f)[r]);
    if (ok) d.source_row.push_back(r);
  }
  const std::size_t n = d.source_row.size();
  d.y.resize(n);
  d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  d.fe.assign(fes.size(), std::vector<std::int32_t>(n));
  d.cluster.resize(n);
  d.cell.resize(n);
  d.time.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = d.source_row[i];
    d.y[i] = y[r];
    for (std::size_t k = 0; k < cols.size(); ++k) d.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = (*cols[k])[r];
    for (std::size_t f = 0; f < fes.size(); ++f) d.fe[f][i] = static_cast<std::int32_t>((*fes[f])[r]);
    d.cluster[i] = static_cast<std::int32_t>(cl[r]);
    d.cell[i] = d.cluster[i];
  }
  return d;
}

struct FitOptions {
  double demean_tol = 1e-10;
  int demean_max_sweeps = 100000;
  int max_iter = 100;
  double deviance_tol = 1e-9;
  int max_halvings = 10;
  int threads = 1;
};

struct DroppedGroup {
  std::string dim;
  std::int32_t id = 0;
};

struct FitResult {
  Family family = Family::Poisson;
  std::vector<std::string> names;
  Eigen::VectorXd coef;
  std::vector<std::pair<VcovSpec, VcovMatrix>> vcovs;
  double loglik = 0.0;
  double deviance = 0.0;
  double bic = 0.0;
  double r2 = std::numeric_limits<double>::quiet_NaN();  // linear only
  std::size_t n_obs_sample = 0;
  std::size_t n_obs_used = 0;
  std::size_t dropped_rows = 0;
  std::vector<DroppedGroup> dropped_groups;
  bool converged = false;
  int iterations = 0;
  std::string message;
  ScoreData inference;
  std::vector<std::size_t> used;  // indices into the design rows
  Eigen::VectorXd fitted;         // mu (Poisson) or fitted values (Linear) on `used`
  Eigen::VectorXd eta;            // linear predictor on `used`

  Eigen::Index index_of(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == name) return static_cast<Eigen::Index>(k);
    throw NameError("unknown coefficient: " + name);
  }
  double coefficient(const std::string& name) const { return coef[index_of(name)]; }

  const VcovMatrix& vcov(const std::string& label) const {
    for (const auto& [spec, v] : vcovs)
      if (spec.label() == label) return v;
    throw NameError("no vcov named " + label);
  }
  double se(const std::string& coef_name, const std::string& vcov_label = "cluster") const {
    const auto k = index_of(coef_name);
    return std::sqrt(vcov(vcov_label).matrix(k, k));
  }
};

namespace detail {

struct Sample {
  std::vector<std::size_t> rows;
  FixedEffects fe;
  std::vector<DroppedGroup> dropped;
};

// Repeatedly removes groups (in any FE dimension) whose outcome sums to zero.
inline Sample drop_zero_outcome_groups(const Design& d, bool drop) {
  std::vector<char> keep(d.n(), 1);
  std::vector<DroppedGroup> dropped;
  if (drop) {
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t f = 0; f < d.fe.size(); ++f) {
        std::map<std::int32_t, double> sums;
        for (std::size_t i = 0; i < d.n(); ++i)
          if (keep[i]) sums[d.fe[f][i]] += d.y[i];
        std::set<std::int32_t> zero;
        for (const auto& [g, s] : sums)
          if (s <= 0.0) zero.insert(g);
        if (zero.empty()) continue;
        for (auto g : zero) dropped.push_back({d.fe_names[f], g});
        for (std::size_t i = 0; i < d.n(); ++i)
          if (keep[i] && zero.count(d.fe[f][i])) keep[i] = 0;
        changed = true;
      }
    }
  }
  Sample s;
  s.dropped = std::move(dropped);
  for (std::size_t i = 0; i < d.n(); ++i)
    if (keep[i]) s.rows.push_back(i);
  s.fe.ids.resize(d.fe.size());
  s.fe.n_levels.resize(d.fe.size());
  for (std::size_t f = 0; f < d.fe.size(); ++f) {
    std::vector<std::int32_t> raw(s.rows.size());
    for (std::size_t i = 0; i < s.rows.size(); ++i) raw[i] = d.fe[f][s.rows[i]];
    s.fe.ids[f] = compact_ids(raw, &s.fe.n_levels[f]);
  }
  return s;
}

inline void demean_columns(const Demeaner& dm, Eigen::MatrixXd& m, int threads) {
  parallel_for(static_cast<std::size_t>(m.cols()), threads, [&](std::size_t k) {
    auto col = m.col(static_cast<Eigen::Index>(k));
    dm.demean(std::span<double>(col.data(), static_cast<std::size_t>(col.size())));
  });
}

// Solves (Xd' W Xd) b = Xd' W z by Cholesky, rejecting columns whose pivot
// is negligible relative to their weighted sum of squares in X.
inline Eigen::VectorXd solve_weighted(const Eigen::MatrixXd& xd, const Eigen::MatrixXd& x_raw,
                                      const Eigen::VectorXd& w, const Eigen::VectorXd& z,
                                      const std::vector<std::string>& names, Eigen::MatrixXd* gram_out) {
  const Eigen::Index k = xd.cols();
  Eigen::MatrixXd wx = xd.array().colwise() * w.array();
  Eigen::MatrixXd gram = xd.transpose() * wx;
  Eigen::VectorXd rhs = wx.transpose() * z;
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double raw_ss = (x_raw.col(j).array().square() * w.array()).sum();
    double dj = gram(j, j);
    for (Eigen::Index p = 0; p < j; ++p) dj -= l(j, p) * l(j, p);
    if (!(dj > 1e-9 * raw_ss) || raw_ss <= 0.0)
      throw SingularityError(names[static_cast<std::size_t>(j)],
                             "regressor '" + names[static_cast<std::size_t>(j)] +
                                 "' is collinear with the fixed effects or earlier regressors");
    l(j, j) = std::sqrt(dj);
    for (Eigen::Index i = j + 1; i < k; ++i) {
      double v = gram(i, j);
      for (Eigen::Index p = 0; p < j; ++p) v -= l(i, p) * l(j, p);
      l(i, j) = v / l(j, j);
    }
  }
  if (gram_out) *gram_out = gram;
  Eigen::VectorXd tmp = l.triangularView<Eigen::Lower>().solve(rhs);
  return l.transpose().triangularView<Eigen::Upper>().solve(tmp);
}

inline double poisson_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double yi = y[i], mi = mu[i];
    dev += yi > 0.0 ? yi * std::log(yi / mi) - (yi - mi) : mi;
  }
  return 2.0 * dev;
}

inline void attach_vcovs(FitResult& fit, const Design& d, const ModelSpec& spec) {
  for (const auto& v : spec.vcov) {
    if (v.kind == VcovKind::ClusterCell) {
      std::vector<std::int32_t> cl(fit.used.size());
      for (std::size_t i = 0; i < fit.used.size(); ++i) cl[i] = d.cluster[fit.used[i]];
      fit.vcovs.emplace_back(v, vcov_cluster(fit.inference, cl));
    } else {
      fit.vcovs.emplace_back(v, vcov_conley(fit.inference, d.centroids, *v.cutoff_m));
    }
  }
}

inline void fill_score_ids(FitResult& fit, const Design& d) {
  fit.inference.cell.resize(fit.used.size());
  fit.inference.time.resize(fit.used.size());
  for (std::size_t i = 0; i < fit.used.size(); ++i) {
    fit.inference.cell[i] = d.cell[fit.used[i]];
    fit.inference.time[i] = d.time[fit.used[i]];
  }
}

}  // namespace detail

inline double bic(const FitResult& fit) {
  return -2.0 * fit.loglik + static_cast<double>(fit.coef.size()) * std::log(static_cast<double>(fit.n_obs_used));
}

// Poisson pseudo-ML with high-dimensional fixed effects, by IRLS whose
// weighted least-squares steps are within-transformed by alternating
// projections. Groups with zero outcome sum are dropped first.
inline FitResult fit_fe_poisson(const Design& d, const ModelSpec& spec, const FitOptions& opt = {}) {
  spec.validate();
  if (spec.family != Family::Poisson) throw InvalidParameter("fit_fe_poisson needs family = Poisson");
  for (double v : d.y)
    if (v < 0.0 || v != std::floor(v)) throw InvalidParameter("Poisson outcome must be a nonnegative integer");

  FitResult fit;
  fit.family = Family::Poisson;
  fit.names = d.names;
  fit.n_obs_sample = d.n();
  const Eigen::Index k = d.X.cols();
  fit.coef = Eigen::VectorXd::Zero(k);

  detail::Sample s = detail::drop_zero_outcome_groups(d, true);
  fit.dropped_groups = s.dropped;
  fit.used = s.rows;
  fit.n_obs_used = s.rows.size();
  fit.dropped_rows = d.n() - s.rows.size();
  if (s.rows.empty()) {
    fit.message = "every fixed-effect group has zero outcome; nothing to estimate";
    return fit;
  }

  const Eigen::Index n = static_cast<Eigen::Index>(s.rows.size());
  Eigen::VectorXd y(n);
  Eigen::MatrixXd x(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = d.y[s.rows[static_cast<std::size_t>(i)]];
    x.row(i) = d.X.row(static_cast<Eigen::Index>(s.rows[static_cast<std::size_t>(i)]));
  }

  // Start: slopes 0, linear predictor at log(group mean) of the first FE dimension.
  Eigen::VectorXd eta(n);
  {
    const auto& ids = s.fe.ids[0];
    std::vector<double> sum(static_cast<std::size_t>(s.fe.n_levels[0]), 0.0), cnt(sum.size(), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])] += y[i];
      cnt[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])] += 1.0;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto g = static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]);
      eta[i] = std::log(sum[g] / cnt[g] + 1e-8);
    }
  }
  Eigen::VectorXd mu = eta.array().exp();
  double dev = detail::poisson_deviance(y, mu);

  Eigen::MatrixXd xd = x;                 // warm-started demeaned regressors
  Eigen::VectorXd z_fe = Eigen::VectorXd::Zero(n);  // FE part removed from z last time
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);

  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    fit.iterations = iter;
    Eigen::VectorXd z = eta.array() + (y.array() - mu.array()) / mu.array();
    Demeaner dm(s.fe, std::span<const double>(mu.data(), static_cast<std::size_t>(n)), opt.demean_tol,
                opt.demean_max_sweeps);
    Eigen::VectorXd zd = z - z_fe;
    dm.demean(std::span<double>(zd.data(), static_cast<std::size_t>(n)));
    detail::demean_columns(dm, xd, opt.threads);

    Eigen::VectorXd beta_new = detail::solve_weighted(xd, x, mu, zd, fit.names, nullptr);
    Eigen::VectorXd resid = zd - xd * beta_new;
    Eigen::VectorXd eta_new = z - resid;
    z_fe = z - zd;

    Eigen::VectorXd mu_new = eta_new.array().min(700.0).exp();
    double dev_new = detail::poisson_deviance(y, mu_new);
    for (int h = 0; h < opt.max_halvings && !(dev_new <= dev * (1.0 + 1e-12)) && iter > 1; ++h) {
      eta_new = 0.5 * (eta + eta_new);
      beta_new = 0.5 * (beta + beta_new);
      mu_new = eta_new.array().min(700.0).exp();
      dev_new = detail::poisson_deviance(y, mu_new);
    }
    const double change = std::abs(dev_new - dev) / std::max(std::abs(dev_new), 0.1);
    eta = eta_new;
    mu = mu_new;
    beta = beta_new;
    dev = dev_new;
    if (change < opt.deviance_tol) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) fit.message = "IRLS reached the iteration limit";

  // Inference at the final weights.
  Demeaner dm(s.fe, std::span<const double>(mu.data(), static_cast<std::size_t>(n)), opt.demean_tol,
              opt.demean_max_sweeps);
  detail::demean_columns(dm, xd, opt.threads);
  Eigen::MatrixXd gram;
  {
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
    detail::solve_weighted(xd, x, mu, zero, fit.names, &gram);
  }
  fit.coef = beta;
  fit.eta = eta;
  fit.fitted = mu;
  fit.deviance = dev;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) ll += y[i] * eta[i] - mu[i] - std::lgamma(y[i] + 1.0);
  fit.loglik = ll;
  fit.bic = bic(fit);
  fit.inference.bread = gram.inverse();
  fit.inference.bread = 0.5 * (fit.inference.bread + fit.inference.bread.transpose()).eval();
  fit.inference.scores = xd.array().colwise() * (y - mu).array();
  detail::fill_score_ids(fit, d);
  detail::attach_vcovs(fit, d, spec);
  return fit;
}

// Within-transformed least squares over any number of additive FE dimensions.
inline FitResult fit_fe_linear(const Design& d, const ModelSpec& spec, const FitOptions& opt = {}) {
  spec.validate();
  if (spec.family != Family::Linear) throw InvalidParameter("fit_fe_linear needs family = Linear");
  FitResult fit;
  fit.family = Family::Linear;
  fit.names = d.names;
  fit.n_obs_sample = d.n();
  detail::Sample s = detail::drop_zero_outcome_groups(d, false);
  fit.used = s.rows;
  fit.n_obs_used = s.rows.size();
  const Eigen::Index n = static_cast<Eigen::Index>(s.rows.size());
  const Eigen::Index k = d.X.cols();
  if (n <= k) throw InvalidParameter("linear fit needs more observations than regressors");

  Eigen::VectorXd y(n);
  Eigen::MatrixXd x(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = d.y[s.rows[static_cast<std::size_t>(i)]];
    x.row(i) = d.X.row(static_cast<Eigen::Index>(s.rows[static_cast<std::size_t>(i)]));
  }
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  Demeaner dm(s.fe, std::span<const double>(ones.data(), static_cast<std::size_t>(n)), opt.demean_tol,
              opt.demean_max_sweeps);
  Eigen::VectorXd yd = y;
  dm.demean(std::span<double>(yd.data(), static_cast<std::size_t>(n)));
  Eigen::MatrixXd xd = x;
  detail::demean_columns(dm, xd, opt.threads);

  Eigen::MatrixXd gram;
  fit.coef = detail::solve_weighted(xd, x, ones, yd, fit.names, &gram);
  Eigen::VectorXd resid = yd - xd * fit.coef;
  fit.fitted = y - resid;
  fit.eta = fit.fitted;
  const double rss = resid.squaredNorm();
  const double tss = (y.array() - y.mean()).square().sum();
  fit.r2 = tss > 0 ? 1.0 - rss / tss : std::numeric_limits<double>::quiet_NaN();
  const double sigma2 = rss / static_cast<double>(n);
  fit.loglik = -0.5 * static_cast<double>(n) * (std::log(2.0 * std::numbers::pi * std::max(sigma2, 1e-300)) + 1.0);
  fit.deviance = rss;
  fit.bic = bic(fit);
  fit.converged = true;
  fit.iterations = 1;
  fit.inference.bread = gram.inverse();
  fit.inference.bread = 0.5 * (fit.inference.bread + fit.inference.bread.transpose()).eval();
  fit.inference.scores = xd.array().colwise() * resid.array();
  detail::fill_score_ids(fit, d);
  detail::attach_vcovs(fit, d, spec);
  return fit;
}

inline FitResult fit_model(const Design& d, const ModelSpec& spec, const FitOptions& opt = {}) {
  return spec.family == Family::Poisson ? fit_fe_poisson(d, spec, opt) : fit_fe_linear(d, spec, opt);
}

inline WaldResult wald_joint_test(const FitResult& fit, const std::vector<std::string>& subset,
                                  const std::string& vcov_label = "cluster") {
  if (subset.empty()) throw InvalidParameter("Wald test needs a nonempty coefficient subset");
  const auto& v = fit.vcov(vcov_label).matrix;
  const Eigen::Index m = static_cast<Eigen::Index>(subset.size());
  Eigen::VectorXd b(m);
  Eigen::MatrixXd vs(m, m);
  std::vector<Eigen::Index> idx;
  for (const auto& s : subset) idx.push_back(fit.index_of(s));
  for (Eigen::Index i = 0; i < m; ++i) {
    b[i] = fit.coef[idx[static_cast<std::size_t>(i)]];
    for (Eigen::Index j = 0; j < m; ++j) vs(i, j) = v(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return wald_test(b, vs);
}

// Two-sided normal p-value.
inline double normal_p_value(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

inline const char* significance_stars(double p) {
  if (!(p == p)) return "";
  return p < 0.01 ? "***" : p < 0.05 ? "**" : p < 0.1 ? "*" : "";
}

inline nlohmann::json fit_to_json(const FitResult& fit) {
  nlohmann::json coefs = nlohmann::json::object();
  for (std::size_t k = 0; k < fit.names.size(); ++k) coefs[fit.names[k]] = fit.coef[static_cast<Eigen::Index>(k)];
  nlohmann::json ses = nlohmann::json::object();
  nlohmann::json repaired = nlohmann::json::object();
  for (const auto& [spec, v] : fit.vcovs) {
    nlohmann::json m = nlohmann::json::object();
    for (std::size_t k = 0; k < fit.names.size(); ++k)
      m[fit.names[k]] = std::sqrt(v.matrix(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)));
    ses[spec.label()] = m;
    repaired[spec.label()] = v.psd_repaired;
  }
  nlohmann::json j = {{"family", fit.family == Family::Poisson ? "poisson" : "linear"},
                      {"terms", fit.names},
                      {"coefficients", coefs},
                      {"se", ses},
                      {"vcov_psd_repaired", repaired},
                      {"loglik", fit.loglik},
                      {"bic", fit.bic},
                      {"deviance", fit.deviance},
                      {"n_obs_sample", fit.n_obs_sample},
                      {"n_obs_used", fit.n_obs_used},
                      {"dropped_rows", fit.dropped_rows},
                      {"dropped_groups", fit.dropped_groups.size()},
                      {"convergence",
                       {{"converged", fit.converged}, {"iterations", fit.iterations}, {"message", fit.message}}}};
  if (fit.family == Family::Linear) j["r2"] = fit.r2;
  return j;
}

// One column per fit: coefficient, cluster SE, Conley SE and stars. Rows
// cover the union of terms, then Observations and BIC.
struct TableColumn {
  std::string label;
  const FitResult* fit = nullptr;
  std::string conley_label;  // empty when the column has no Conley SE
};

inline void write_regression_table(std::ostream& out, const std::vector<TableColumn>& columns) {
  std::vector<std::string> terms;
  for (const auto& c : columns)
    for (const auto& t : c.fit->names)
      if (std::find(terms.begin(), terms.end(), t) == terms.end()) terms.push_back(t);
  out << "term";
  for (const auto& c : columns)
    out << ',' << c.label << "_coef," << c.label << "_se_cluster," << c.label << "_se_conley," << c.label << "_signif";
  out << '\n';
  char buf[64];
  auto num = [&](double v) -> std::string {
    if (!(v == v)) return "";
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
  };
  for (const auto& t : terms) {
    out << t;
    for (const auto& c : columns) {
      const auto& f = *c.fit;
      auto it = std::find(f.names.begin(), f.names.end(), t);
      if (it == f.names.end() || f.n_obs_used == 0) {
        out << ",,,,";
        continue;
      }
      const double b = f.coefficient(t);
      const double se_c = f.se(t, "cluster");
      const double se_s = c.conley_label.empty() ? std::numeric_limits<double>::quiet_NaN() : f.se(t, c.conley_label);
      out << ',' << num(b) << ',' << num(se_c) << ',' << num(se_s) << ',' << significance_stars(normal_p_value(b / se_c));
    }
    out << '\n';
  }
  out << "Observations";
  for (const auto& c : columns) out << ',' << c.fit->n_obs_used << ",,,";
  out << "\nBIC";
  for (const auto& c : columns) {
    std::snprintf(buf, sizeof buf, "%.1f", c.fit->bic);
    out << ',' << buf << ",,,";
  }
  out << '\n';
}

}  // namespace blitzeval
