#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "blitzeval/error.hpp"

namespace blitzeval {

inline constexpr double kEarthRadiusM = 6371000.0;

struct GeoPoint {
  double lat = 0.0;  // degrees, WGS84
  double lon = 0.0;

  bool valid() const {
    return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 &&
           lon >= -180.0 && lon <= 180.0;
  }
  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

inline constexpr double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

// Haversine distance in meters on a sphere of radius kEarthRadiusM.
inline double great_circle_distance(const GeoPoint& a, const GeoPoint& b) {
  const double phi1 = deg2rad(a.lat);
  const double phi2 = deg2rad(b.lat);
  const double sin_dphi = std::sin(0.5 * (phi2 - phi1));
  const double sin_dlam = std::sin(0.5 * deg2rad(b.lon - a.lon));
  double h = sin_dphi * sin_dphi + std::cos(phi1) * std::cos(phi2) * sin_dlam * sin_dlam;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(h));
}

struct XY {
  double x = 0.0;
  double y = 0.0;
};

// Equirectangular tangent-plane projection in meters. Origin is a fixed
// GeoPoint; the longitude scale uses cos(reference_lat). Exact inverse.
class LocalProjection {
 public:
  LocalProjection() = default;
  LocalProjection(GeoPoint origin, double reference_lat)
      : origin_(origin), lon_scale_(kEarthRadiusM * deg2rad(1.0) * std::cos(deg2rad(reference_lat))),
        lat_scale_(kEarthRadiusM * deg2rad(1.0)) {}

  XY to_xy(const GeoPoint& p) const {
    return {(p.lon - origin_.lon) * lon_scale_, (p.lat - origin_.lat) * lat_scale_};
  }
  GeoPoint to_geo(const XY& q) const {
    return {origin_.lat + q.y / lat_scale_, origin_.lon + q.x / lon_scale_};
  }
  const GeoPoint& origin() const { return origin_; }

 private:
  GeoPoint origin_{};
  double lon_scale_ = 1.0;
  double lat_scale_ = 1.0;
};

// Simple polygon as an open ring of vertices (the closing vertex is not
// repeated). Coordinates are (lat, lon); files store (lon, lat).
struct Polygon {
  std::vector<GeoPoint> ring;

  struct BBox {
    double min_lat, min_lon, max_lat, max_lon;
  };

  BBox bbox() const {
    BBox b{90.0, 180.0, -90.0, -180.0};
    for (const auto& p : ring) {
      b.min_lat = std::min(b.min_lat, p.lat);
      b.max_lat = std::max(b.max_lat, p.lat);
      b.min_lon = std::min(b.min_lon, p.lon);
      b.max_lon = std::max(b.max_lon, p.lon);
    }
    return b;
  }
};

// Drops a repeated closing vertex and consecutive duplicates.
inline Polygon normalize_ring(std::vector<GeoPoint> pts) {
  Polygon out;
  for (const auto& p : pts) {
    if (out.ring.empty() || !(out.ring.back() == p)) out.ring.push_back(p);
  }
  while (out.ring.size() > 1 && out.ring.front() == out.ring.back()) out.ring.pop_back();
  return out;
}

// Signed shoelace area of a planar ring.
inline double signed_area(std::span<const XY> pts) {
  double acc = 0.0;
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    const XY& a = pts[i];
    const XY& b = pts[(i + 1) % n];
    acc += a.x * b.y - b.x * a.y;
  }
  return 0.5 * acc;
}

// Crossing-number test. Points exactly on an edge are resolved by the
// half-open convention of the ray cast, deterministically.
inline bool point_in_ring(std::span<const XY> pts, XY p) {
  bool inside = false;
  const std::size_t n = pts.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const XY& a = pts[i];
    const XY& b = pts[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      double x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

namespace detail {

inline double orient(XY a, XY b, XY c) { return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x); }

inline bool on_segment(XY a, XY b, XY p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

inline bool segments_intersect(XY p1, XY p2, XY q1, XY q2) {
  double d1 = orient(q1, q2, p1), d2 = orient(q1, q2, p2);
  double d3 = orient(p1, p2, q1), d4 = orient(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  if (d1 == 0 && on_segment(q1, q2, p1)) return true;
  if (d2 == 0 && on_segment(q1, q2, p2)) return true;
  if (d3 == 0 && on_segment(p1, p2, q1)) return true;
  if (d4 == 0 && on_segment(p1, p2, q2)) return true;
  return false;
}

}  // namespace detail

// O(n^2) check over non-adjacent edge pairs.
inline bool is_self_intersecting(std::span<const XY> pts) {
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    XY a1 = pts[i], a2 = pts[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
      XY b1 = pts[j], b2 = pts[(j + 1) % n];
      if (detail::segments_intersect(a1, a2, b1, b2)) return true;
    }
  }
  return false;
}

// Planar view of a polygon under a projection, with cached bbox.
class ProjectedPolygon {
 public:
  ProjectedPolygon() = default;
  ProjectedPolygon(const Polygon& poly, const LocalProjection& proj) {
    pts_.reserve(poly.ring.size());
    for (const auto& p : poly.ring) pts_.push_back(proj.to_xy(p));
    min_ = max_ = pts_.empty() ? XY{} : pts_.front();
    for (const auto& q : pts_) {
      min_.x = std::min(min_.x, q.x);
      min_.y = std::min(min_.y, q.y);
      max_.x = std::max(max_.x, q.x);
      max_.y = std::max(max_.y, q.y);
    }
  }

  bool contains(XY p) const {
    if (p.x < min_.x || p.x > max_.x || p.y < min_.y || p.y > max_.y) return false;
    return point_in_ring(pts_, p);
  }
  double area_m2() const { return std::abs(signed_area(pts_)); }

  // Area centroid of the ring.
  XY centroid() const {
    double a = 0.0, cx = 0.0, cy = 0.0;
    const std::size_t n = pts_.size();
    for (std::size_t i = 0; i < n; ++i) {
      const XY& p = pts_[i];
      const XY& q = pts_[(i + 1) % n];
      double c = p.x * q.y - q.x * p.y;
      a += c;
      cx += (p.x + q.x) * c;
      cy += (p.y + q.y) * c;
    }
    a *= 0.5;
    return {cx / (6.0 * a), cy / (6.0 * a)};
  }
  std::span<const XY> points() const { return pts_; }
  XY min() const { return min_; }
  XY max() const { return max_; }

 private:
  std::vector<XY> pts_;
  XY min_{}, max_{};
};

}  // namespace blitzeval
