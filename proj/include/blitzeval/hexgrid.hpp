#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "blitzeval/error.hpp"
#include "blitzeval/geo.hpp"

namespace blitzeval {

struct Axial {
  int q = 0;
  int r = 0;
  friend bool operator==(const Axial&, const Axial&) = default;
};

// The six flat-top axial directions, counter-clockwise starting east-north-east.
inline constexpr std::array<Axial, 6> kAxialDirections{
    {{1, 0}, {1, -1}, {0, -1}, {-1, 0}, {-1, 1}, {0, 1}}};

class HexGrid;
inline HexGrid build_hex_grid(const Polygon& boundary, double nominal_cell_area_km2);

struct Cell {
  int id = 0;
  GeoPoint centroid;
  std::array<GeoPoint, 6> vertices;  // counter-clockwise, ring closes back to vertices[0]
  double area_km2 = 0.0;
};

// Flat-top hexagonal tessellation of a boundary polygon.
//
// Lattice: axial coordinates (q, r) with centers
//   x = x0 + 1.5 s q,  y = y0 + sqrt(3) s (r + q/2)
// in a local projection whose origin is the bounding-box southwest corner,
// where s is the circumradius and (x0, y0) = (s/2, sqrt(3) s/4). A lattice
// cell is in the grid iff its centre lies inside the boundary. Ids follow
// (q, r) lexicographic order.
class HexGrid {
 public:
  const std::vector<Cell>& cells() const { return cells_; }
  std::size_t size() const { return cells_.size(); }
  const Cell& cell(int id) const { return cells_.at(static_cast<std::size_t>(id)); }
  double nominal_cell_area_km2() const { return nominal_area_km2_; }
  const Polygon& boundary() const { return boundary_; }
  const LocalProjection& projection() const { return proj_; }
  double hex_radius_m() const { return radius_m_; }
  // Distance between adjacent centres.
  double spacing_m() const { return std::sqrt(3.0) * radius_m_; }
  Axial axial(int id) const { return axial_.at(static_cast<std::size_t>(id)); }
  XY centroid_xy(int id) const { return centroid_xy_.at(static_cast<std::size_t>(id)); }

  std::optional<int> find(Axial a) const {
    auto it = index_.find(key(a));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  XY lattice_center(Axial a) const {
    return {origin_.x + 1.5 * radius_m_ * a.q, origin_.y + std::sqrt(3.0) * radius_m_ * (a.r + 0.5 * a.q)};
  }

  // Nearest lattice position under hexagonal rounding.
  Axial round_to_lattice(XY p) const {
    double x = (p.x - origin_.x) / radius_m_;
    double y = (p.y - origin_.y) / radius_m_;
    double fq = 2.0 / 3.0 * x;
    double fr = -x / 3.0 + std::sqrt(3.0) / 3.0 * y;
    double fs = -fq - fr;
    double rq = std::round(fq), rr = std::round(fr), rs = std::round(fs);
    double dq = std::abs(rq - fq), dr = std::abs(rr - fr), ds = std::abs(rs - fs);
    if (dq > dr && dq > ds) {
      rq = -rr - rs;
    } else if (dr > ds) {
      rr = -rq - rs;
    }
    return {static_cast<int>(rq), static_cast<int>(rr)};
  }

  // Closed containment in the regular hexagon around `center`.
  bool hex_contains(XY center, XY p, double eps = 1e-9) const {
    const double dx = std::abs(p.x - center.x);
    const double dy = std::abs(p.y - center.y);
    const double tol = eps * radius_m_;
    const double r3 = std::sqrt(3.0);
    return dy <= 0.5 * r3 * radius_m_ + tol && r3 * dx + dy <= r3 * radius_m_ + tol;
  }

  bool boundary_contains(XY p) const { return boundary_xy_.contains(p); }

 private:
  friend HexGrid build_hex_grid(const Polygon&, double);

  static std::int64_t key(Axial a) {
    return (static_cast<std::int64_t>(a.q) << 32) ^ static_cast<std::uint32_t>(a.r);
  }

  void add_cell(Axial a) {
    Cell c;
    c.id = static_cast<int>(cells_.size());
    XY center = lattice_center(a);
    c.centroid = proj_.to_geo(center);
    std::array<XY, 6> vxy;
    for (int k = 0; k < 6; ++k) {
      double ang = deg2rad(60.0 * k);
      vxy[k] = {center.x + radius_m_ * std::cos(ang), center.y + radius_m_ * std::sin(ang)};
      c.vertices[k] = proj_.to_geo(vxy[k]);
    }
    std::array<XY, 6> back;
    for (int k = 0; k < 6; ++k) back[k] = proj_.to_xy(c.vertices[k]);
    c.area_km2 = std::abs(signed_area(back)) / 1e6;
    index_.emplace(key(a), c.id);
    axial_.push_back(a);
    centroid_xy_.push_back(center);
    cells_.push_back(c);
  }

  std::vector<Cell> cells_;
  std::vector<Axial> axial_;
  std::vector<XY> centroid_xy_;
  std::unordered_map<std::int64_t, int> index_;
  Polygon boundary_;
  ProjectedPolygon boundary_xy_;
  LocalProjection proj_;
  XY origin_{};
  double radius_m_ = 0.0;
  double nominal_area_km2_ = 0.0;
};

inline double hex_radius_for_area(double area_km2) {
  return std::sqrt(2.0 * area_km2 * 1e6 / (3.0 * std::sqrt(3.0)));
}

inline HexGrid build_hex_grid(const Polygon& boundary_in, double nominal_cell_area_km2) {
  if (!(nominal_cell_area_km2 > 0.0) || !std::isfinite(nominal_cell_area_km2))
    throw InvalidParameter("nominal cell area must be positive");
  Polygon boundary = normalize_ring(boundary_in.ring);
  if (boundary.ring.size() < 3) throw InvalidBoundary("boundary needs at least 3 distinct vertices");
  for (const auto& p : boundary.ring)
    if (!p.valid()) throw InvalidBoundary("boundary vertex outside WGS84 range");

  HexGrid g;
  auto bb = boundary.bbox();
  g.proj_ = LocalProjection({bb.min_lat, bb.min_lon}, 0.5 * (bb.min_lat + bb.max_lat));
  g.boundary_ = boundary;
  g.boundary_xy_ = ProjectedPolygon(boundary, g.proj_);
  g.nominal_area_km2_ = nominal_cell_area_km2;
  g.radius_m_ = hex_radius_for_area(nominal_cell_area_km2);

  if (!(g.boundary_xy_.area_m2() > 0.0)) throw InvalidBoundary("boundary has zero area");
  if (is_self_intersecting(g.boundary_xy_.points())) throw InvalidBoundary("boundary is self-intersecting");

  const double s = g.radius_m_;
  const double r3 = std::sqrt(3.0);
  g.origin_ = {0.5 * s, 0.25 * r3 * s};
  const XY hi = g.boundary_xy_.max();

  const int q_lo = static_cast<int>(std::floor(-g.origin_.x / (1.5 * s))) - 1;
  const int q_hi = static_cast<int>(std::ceil((hi.x - g.origin_.x) / (1.5 * s))) + 1;
  for (int q = q_lo; q <= q_hi; ++q) {
    const int r_lo = static_cast<int>(std::floor(-g.origin_.y / (r3 * s) - 0.5 * q)) - 1;
    const int r_hi = static_cast<int>(std::ceil((hi.y - g.origin_.y) / (r3 * s) - 0.5 * q)) + 1;
    for (int r = r_lo; r <= r_hi; ++r) {
      Axial a{q, r};
      if (g.boundary_xy_.contains(g.lattice_center(a))) g.add_cell(a);
    }
  }

  // Boundary too small to hold any lattice centre: one cell on its centroid.
  if (g.cells_.empty()) {
    g.origin_ = g.boundary_xy_.centroid();
    g.add_cell({0, 0});
  }
  return g;
}

// Cell containing p. Points outside the boundary map to no cell; points
// inside the boundary but outside every retained hexagon (the clipped rim)
// go to the nearest centroid. Ties: lowest id.
inline std::optional<int> locate(const HexGrid& grid, const GeoPoint& p) {
  if (!p.valid()) return std::nullopt;
  const XY xy = grid.projection().to_xy(p);
  if (!grid.boundary_contains(xy)) return std::nullopt;

  const Axial base = grid.round_to_lattice(xy);
  std::optional<int> best;
  auto consider = [&](Axial a) {
    auto id = grid.find(a);
    if (id && grid.hex_contains(grid.centroid_xy(*id), xy) && (!best || *id < *best)) best = id;
  };
  consider(base);
  for (const auto& d : kAxialDirections) consider({base.q + d.q, base.r + d.r});
  if (best) return best;

  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    XY c = grid.centroid_xy(static_cast<int>(i));
    double d2 = (c.x - xy.x) * (c.x - xy.x) + (c.y - xy.y) * (c.y - xy.y);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<int>(i);
    }
  }
  return best;
}

// Axis-aligned square (in local meters) centred at `center`.
inline Polygon square_boundary(GeoPoint center, double side_m) {
  LocalProjection proj(center, center.lat);
  const double h = 0.5 * side_m;
  return Polygon{{proj.to_geo({-h, -h}), proj.to_geo({h, -h}), proj.to_geo({h, h}), proj.to_geo({-h, h})}};
}

// Square of side `side_m` rotated by `angle_deg` about the centre.
inline Polygon rotated_square_boundary(GeoPoint center, double side_m, double angle_deg) {
  LocalProjection proj(center, center.lat);
  const double h = 0.5 * side_m, c = std::cos(deg2rad(angle_deg)), s = std::sin(deg2rad(angle_deg));
  std::vector<GeoPoint> ring;
  for (auto [x, y] : {std::pair{-h, -h}, std::pair{h, -h}, std::pair{h, h}, std::pair{-h, h}})
    ring.push_back(proj.to_geo({c * x - s * y, s * x + c * y}));
  return Polygon{ring};
}

// Square whose tessellation has exactly `n_cells` cells. An axis-aligned
// square swallows whole lattice rows at a time, so we tilt it (a few angles)
// and search the side within +-15% of sqrt(n * area). Returns the closest
// when no exact side exists.
inline Polygon square_boundary_for_cells(GeoPoint center, int n_cells, double cell_area_km2) {
  const double base = std::sqrt(n_cells * cell_area_km2) * 1000.0;
  Polygon best = rotated_square_boundary(center, base, 7.0);
  long best_gap = std::numeric_limits<long>::max();
  for (double tilt : {7.0, 11.3, 17.9, 23.1}) {
    for (int step = 0; step <= 1500; ++step) {
      for (int sign : {1, -1}) {
        if (step == 0 && sign < 0) continue;
        Polygon sq = rotated_square_boundary(center, base * (1.0 + sign * 1e-4 * step), tilt);
        long gap = std::labs(static_cast<long>(build_hex_grid(sq, cell_area_km2).size()) - n_cells);
        if (gap < best_gap) {
          best_gap = gap;
          best = sq;
        }
        if (gap == 0) return best;
      }
    }
  }
  return best;
}

// GeoJSON: Polygon geometry, Feature, or FeatureCollection (first feature).
// Only the outer ring is used; coordinates are [lon, lat].
inline Polygon polygon_from_geojson(const nlohmann::json& doc) {
  const nlohmann::json* geom = &doc;
  if (doc.value("type", "") == "FeatureCollection") {
    if (!doc.contains("features") || doc["features"].empty()) throw InvalidBoundary("empty FeatureCollection");
    geom = &doc["features"][0]["geometry"];
  } else if (doc.value("type", "") == "Feature") {
    geom = &doc["geometry"];
  }
  if (geom->value("type", "") != "Polygon") throw InvalidBoundary("boundary geometry must be a Polygon");
  const auto& rings = (*geom)["coordinates"];
  if (!rings.is_array() || rings.empty()) throw InvalidBoundary("polygon has no rings");
  std::vector<GeoPoint> pts;
  for (const auto& c : rings[0]) {
    if (!c.is_array() || c.size() < 2) throw InvalidBoundary("bad coordinate pair");
    pts.push_back({c[1].get<double>(), c[0].get<double>()});
  }
  return normalize_ring(std::move(pts));
}

inline Polygon read_boundary_geojson(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidBoundary("cannot open boundary file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidBoundary("boundary file is not valid JSON: " + std::string(e.what()));
  }
  return polygon_from_geojson(doc);
}

inline nlohmann::json polygon_to_geojson(const Polygon& poly) {
  nlohmann::json ring = nlohmann::json::array();
  for (const auto& p : poly.ring) ring.push_back({p.lon, p.lat});
  if (!poly.ring.empty()) ring.push_back({poly.ring.front().lon, poly.ring.front().lat});
  return {{"type", "Feature"},
          {"properties", nlohmann::json::object()},
          {"geometry", {{"type", "Polygon"}, {"coordinates", nlohmann::json::array({ring})}}}};
}

inline void write_cells_csv(std::ostream& out, const HexGrid& grid) {
  out << "id,lat,lon,area_km2\n";
  char buf[128];
  for (const auto& c : grid.cells()) {
    std::snprintf(buf, sizeof buf, "%d,%.10f,%.10f,%.8f\n", c.id, c.centroid.lat, c.centroid.lon, c.area_km2);
    out << buf;
  }
}

}  // namespace blitzeval
