#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "blitzeval/error.hpp"
#include "blitzeval/hexgrid.hpp"

namespace blitzeval {

enum class WeightScheme { BinaryContiguity, InverseDistance };

inline std::string to_string(WeightScheme s) {
  return s == WeightScheme::BinaryContiguity ? "contiguity" : "inverse_distance";
}

inline WeightScheme weight_scheme_from_string(const std::string& s) {
  if (s == "contiguity" || s == "binary_contiguity") return WeightScheme::BinaryContiguity;
  if (s == "inverse_distance" || s == "idw") return WeightScheme::InverseDistance;
  throw InvalidParameter("unknown weight scheme: " + s);
}

struct Neighbor {
  int id = 0;
  double weight = 0.0;
};

// Row-structured sparse weights; rows are sorted by neighbour id.
struct WeightMatrix {
  WeightScheme scheme = WeightScheme::InverseDistance;
  std::optional<double> cutoff_m;
  bool row_standardized = false;
  std::vector<std::vector<Neighbor>> rows;
  double avg_neighbor_count = 0.0;

  std::size_t size() const { return rows.size(); }
  std::size_t nonzeros() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.size();
    return n;
  }
};

// Scales each nonempty row to sum to one.
inline WeightMatrix row_standardize(WeightMatrix w) {
  for (auto& row : w.rows) {
    double sum = 0.0;
    for (const auto& nb : row) sum += nb.weight;
    if (sum > 0.0)
      for (auto& nb : row) nb.weight /= sum;
  }
  w.row_standardized = true;
  return w;
}

namespace detail {

inline void finalize_rows(WeightMatrix& w) {
  std::size_t total = 0;
  for (auto& row : w.rows) {
    std::sort(row.begin(), row.end(), [](const Neighbor& a, const Neighbor& b) { return a.id < b.id; });
    total += row.size();
  }
  w.avg_neighbor_count = w.rows.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(w.rows.size());
}

}  // namespace detail

// Neighbour weights over grid cells.
//   BinaryContiguity: the (up to) six edge-sharing cells, weight 1.
//   InverseDistance:  every other cell whose centroid is within cutoff_m
//                     great-circle meters, weight 1/d_ij.
// Rows are optionally standardized afterwards.
inline WeightMatrix build_weights(const HexGrid& grid, WeightScheme scheme, std::optional<double> cutoff_m,
                                  bool row_standardize_rows) {
  WeightMatrix w;
  w.scheme = scheme;
  w.rows.assign(grid.size(), {});
  const int n = static_cast<int>(grid.size());

  if (scheme == WeightScheme::BinaryContiguity) {
    for (int i = 0; i < n; ++i) {
      Axial a = grid.axial(i);
      for (const auto& d : kAxialDirections)
        if (auto j = grid.find({a.q + d.q, a.r + d.r})) w.rows[i].push_back({*j, 1.0});
    }
  } else {
    if (!cutoff_m || !(*cutoff_m > 0.0) || !std::isfinite(*cutoff_m))
      throw InvalidParameter("inverse-distance weights need a positive cutoff");
    w.cutoff_m = cutoff_m;
    const double cutoff = *cutoff_m;
    // Lattice search radius in steps, padded for sphere/plane mismatch.
    const int reach = static_cast<int>(std::ceil(cutoff * 1.01 / grid.spacing_m())) + 1;
    for (int i = 0; i < n; ++i) {
      const Axial a = grid.axial(i);
      const GeoPoint& ci = grid.cell(i).centroid;
      for (int dq = -reach; dq <= reach; ++dq) {
        const int r_lo = std::max(-reach, -dq - reach);
        const int r_hi = std::min(reach, -dq + reach);
        for (int dr = r_lo; dr <= r_hi; ++dr) {
          auto j = grid.find({a.q + dq, a.r + dr});
          if (!j || *j <= i) continue;
          const double d = great_circle_distance(ci, grid.cell(*j).centroid);
          if (d <= cutoff && d > 0.0) {
            w.rows[i].push_back({*j, 1.0 / d});
            w.rows[*j].push_back({i, 1.0 / d});
          }
        }
      }
    }
  }
  detail::finalize_rows(w);
  if (row_standardize_rows) w = row_standardize(std::move(w));
  return w;
}

// out[i] = sum_j w_ij x[j]; empty rows give 0.
inline std::vector<double> apply_weights(const WeightMatrix& w, std::span<const double> x) {
  if (x.size() != w.size())
    throw DimensionError("apply_weights: vector length " + std::to_string(x.size()) + " != " +
                         std::to_string(w.size()) + " cells");
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i = 0; i < w.rows.size(); ++i) {
    double acc = 0.0;
    for (const auto& nb : w.rows[i]) acc += nb.weight * x[static_cast<std::size_t>(nb.id)];
    out[i] = acc;
  }
  return out;
}

// Triplet CSV `i,j,weight`, weights to 12 significant digits.
inline void write_weights_csv(std::ostream& out, const WeightMatrix& w) {
  out << "i,j,weight\n";
  char buf[96];
  for (std::size_t i = 0; i < w.rows.size(); ++i) {
    for (const auto& nb : w.rows[i]) {
      std::snprintf(buf, sizeof buf, "%zu,%d,%.12g\n", i, nb.id, nb.weight);
      out << buf;
    }
  }
}

}  // namespace blitzeval
