#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "blitzeval/error.hpp"

namespace blitzeval {

// Fixed-effect dimensions with compact level ids 0..n_levels-1.
struct FixedEffects {
  std::vector<std::vector<std::int32_t>> ids;
  std::vector<int> n_levels;

  std::size_t n_dims() const { return ids.size(); }
  std::size_t n_obs() const { return ids.empty() ? 0 : ids.front().size(); }
};

// Relabels arbitrary nonnegative ids to 0..L-1 in order of first appearance.
inline std::vector<std::int32_t> compact_ids(std::span<const std::int32_t> raw, int* n_levels,
                                             std::vector<std::int32_t>* original = nullptr) {
  std::int32_t max_id = 0;
  for (auto v : raw) {
    if (v < 0) throw InvalidParameter("fixed-effect ids must be nonnegative");
    max_id = std::max(max_id, v);
  }
  std::vector<std::int32_t> map(static_cast<std::size_t>(max_id) + 1, -1);
  std::vector<std::int32_t> out(raw.size());
  int next = 0;
  if (original) original->clear();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto& m = map[static_cast<std::size_t>(raw[i])];
    if (m < 0) {
      m = next++;
      if (original) original->push_back(raw[i]);
    }
    out[i] = m;
  }
  *n_levels = next;
  return out;
}

// Weighted within-transformation by alternating projections: each sweep
// subtracts the weighted group mean of every dimension in turn. Stops when
// the largest group mean seen in a sweep is below tol * max(1, rms(v)).
class Demeaner {
 public:
  Demeaner(const FixedEffects& fe, std::span<const double> weights, double tol = 1e-10, int max_sweeps = 100000)
      : fe_(&fe), w_(weights.begin(), weights.end()), tol_(tol), max_sweeps_(max_sweeps) {
    if (w_.size() != fe.n_obs()) throw DimensionError("weights length does not match fixed effects");
    level_weight_.resize(fe.n_dims());
    for (std::size_t d = 0; d < fe.n_dims(); ++d) {
      level_weight_[d].assign(static_cast<std::size_t>(fe.n_levels[d]), 0.0);
      const auto& ids = fe.ids[d];
      for (std::size_t i = 0; i < w_.size(); ++i) level_weight_[d][static_cast<std::size_t>(ids[i])] += w_[i];
    }
  }

  // In place. Returns the number of sweeps used, or -1 if max_sweeps was hit.
  int demean(std::span<double> v) const {
    const std::size_t n = v.size();
    const std::size_t dims = fe_->n_dims();
    if (dims == 0) return 0;
    double ss = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ss += w_[i] * v[i] * v[i];
      wsum += w_[i];
    }
    const double scale = std::max(1.0, wsum > 0 ? std::sqrt(ss / wsum) : 0.0);
    const double threshold = tol_ * scale;

    std::vector<double> sums;
    for (int sweep = 1; sweep <= max_sweeps_; ++sweep) {
      double worst = 0.0;
      for (std::size_t d = 0; d < dims; ++d) {
        const auto& ids = fe_->ids[d];
        const auto& lw = level_weight_[d];
        sums.assign(lw.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i) sums[static_cast<std::size_t>(ids[i])] += w_[i] * v[i];
        for (std::size_t g = 0; g < lw.size(); ++g) {
          sums[g] = lw[g] > 0.0 ? sums[g] / lw[g] : 0.0;
          worst = std::max(worst, std::abs(sums[g]));
        }
        for (std::size_t i = 0; i < n; ++i) v[i] -= sums[static_cast<std::size_t>(ids[i])];
      }
      // One dimension is an exact projection.
      if (dims == 1 || worst < threshold) return sweep;
    }
    return -1;
  }

  std::span<const double> weights() const { return w_; }

 private:
  const FixedEffects* fe_;
  std::vector<double> w_;
  std::vector<std::vector<double>> level_weight_;
  double tol_;
  int max_sweeps_;
};

}  // namespace blitzeval
