#pragma once

// Oriented-box geometry substrate: SE(2)-on-the-plane poses with z translation,
// rotated BEV IoU via convex polygon clipping, point-in-box queries and greedy NMS.
// Everything here is a pure function over value types.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace ums {

inline constexpr double kPi = std::numbers::pi;

/// Normalize an angle into (-pi, pi].
inline double normalize_yaw(double yaw) {
  yaw = std::fmod(yaw, 2.0 * kPi);
  if (yaw <= -kPi) yaw += 2.0 * kPi;
  if (yaw > kPi) yaw -= 2.0 * kPi;
  return yaw;
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// Oriented 3D box. l runs along the heading (yaw), w across, h vertically.
struct Box3D {
  double cx = 0.0, cy = 0.0, cz = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;
  double yaw = 0.0;

  bool valid() const {
    return l > 0.0 && w > 0.0 && h > 0.0 && std::isfinite(cx) &&
           std::isfinite(cy) && std::isfinite(cz) && std::isfinite(yaw);
  }

  /// BEV footprint corners, counter-clockwise.
  std::array<Vec2, 4> bev_corners() const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    const double hl = 0.5 * l, hw = 0.5 * w;
    std::array<Vec2, 4> out;
    const double lx[4] = {hl, -hl, -hl, hl};
    const double ly[4] = {hw, hw, -hw, -hw};
    for (int i = 0; i < 4; ++i) {
      out[i] = {cx + c * lx[i] - s * ly[i], cy + s * lx[i] + c * ly[i]};
    }
    return out;
  }

  double bev_area() const { return l * w; }
};

struct Proposal {
  Box3D box;
  double confidence = 0.0;
};

enum class View { ego, multi };

inline const char* view_name(View v) { return v == View::ego ? "ego" : "multi"; }

/// Ordered set of proposals, all expressed in one frame's ego coordinates.
struct ProposalSet {
  std::string frame_id;
  View view = View::multi;
  std::vector<Proposal> items;
};

/// Planar rigid pose with z offset: rotation about z by yaw, then translation.
struct PoseSE3 {
  double tx = 0.0, ty = 0.0, tz = 0.0;
  double yaw = 0.0;

  bool finite() const {
    return std::isfinite(tx) && std::isfinite(ty) && std::isfinite(tz) &&
           std::isfinite(yaw);
  }

  Point3 apply(const Point3& p) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return {c * p.x - s * p.y + tx, s * p.x + c * p.y + ty, p.z + tz};
  }

  PoseSE3 inverse() const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return {-(c * tx + s * ty), -(-s * tx + c * ty), -tz, normalize_yaw(-yaw)};
  }

  /// this ∘ other: apply `other` first, then this pose.
  PoseSE3 compose(const PoseSE3& other) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return {c * other.tx - s * other.ty + tx, s * other.tx + c * other.ty + ty,
            other.tz + tz, normalize_yaw(yaw + other.yaw)};
  }
};

struct PointCloud {
  std::vector<Point3> points;
  std::string source_agent;
};

/// Map every point by rotation-then-translation; count and source preserved.
inline PointCloud transform_points(const PointCloud& cloud, const PoseSE3& pose) {
  if (!pose.finite()) {
    throw std::invalid_argument("transform_points: non-finite pose");
  }
  PointCloud out;
  out.source_agent = cloud.source_agent;
  out.points.reserve(cloud.points.size());
  for (const Point3& p : cloud.points) out.points.push_back(pose.apply(p));
  return out;
}

/// Box mapped through the same planar rigid transform as transform_points.
inline Box3D transform_box(const Box3D& b, const PoseSE3& pose) {
  Box3D out = b;
  const Point3 c = pose.apply({b.cx, b.cy, b.cz});
  out.cx = c.x;
  out.cy = c.y;
  out.cz = c.z;
  out.yaw = normalize_yaw(b.yaw + pose.yaw);
  return out;
}

namespace detail {

inline double polygon_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(a);
}

// Sutherland-Hodgman: clip `subject` by the half-plane left of edge a->b.
inline std::vector<Vec2> clip_by_edge(const std::vector<Vec2>& subject,
                                      const Vec2& a, const Vec2& b) {
  std::vector<Vec2> out;
  out.reserve(subject.size() + 2);
  const size_t n = subject.size();
  auto side = [&](const Vec2& p) {
    return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
  };
  for (size_t i = 0; i < n; ++i) {
    const Vec2& cur = subject[i];
    const Vec2& nxt = subject[(i + 1) % n];
    const double sc = side(cur), sn = side(nxt);
    if (sc >= 0.0) out.push_back(cur);
    if ((sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0)) {
      const double t = sc / (sc - sn);
      out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
    }
  }
  return out;
}

inline double convex_intersection_area(const std::array<Vec2, 4>& a,
                                       const std::array<Vec2, 4>& b) {
  std::vector<Vec2> poly(a.begin(), a.end());
  for (int i = 0; i < 4 && !poly.empty(); ++i) {
    poly = clip_by_edge(poly, b[i], b[(i + 1) % 4]);
  }
  if (poly.size() < 3) return 0.0;
  return polygon_area(poly);
}

}  // namespace detail

/// BEV rotated IoU of two oriented boxes. Near-degenerate intersections
/// (< 1e-12 m^2) count as zero overlap.
inline double rotated_iou_bev(const Box3D& a, const Box3D& b) {
  const double area_a = a.bev_area();
  const double area_b = b.bev_area();
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const double inter =
      detail::convex_intersection_area(a.bev_corners(), b.bev_corners());
  if (inter < 1e-12) return 0.0;
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct PointsInBoxResult {
  int count = 0;
  std::vector<int> indices;
};

/// Points whose (x, y) lies in the rotated footprint and z within the box
/// height slab. Implements the point-support query pi(b; X).
inline PointsInBoxResult points_in_box(const PointCloud& cloud, const Box3D& box) {
  PointsInBoxResult res;
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double hl = 0.5 * box.l, hw = 0.5 * box.w, hh = 0.5 * box.h;
  for (int i = 0; i < static_cast<int>(cloud.points.size()); ++i) {
    const Point3& p = cloud.points[i];
    const double dx = p.x - box.cx, dy = p.y - box.cy;
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    if (std::abs(lx) <= hl && std::abs(ly) <= hw &&
        std::abs(p.z - box.cz) <= hh) {
      res.indices.push_back(i);
    }
  }
  res.count = static_cast<int>(res.indices.size());
  return res;
}

/// Greedy confidence-descending NMS with rotated BEV IoU. Equal confidences
/// break ties by insertion index (lower wins) so output is deterministic.
inline ProposalSet nms(const ProposalSet& set, double eta) {
  if (!(eta > 0.0 && eta < 1.0)) {
    throw std::invalid_argument("nms: eta must lie in (0,1)");
  }
  ProposalSet out;
  out.frame_id = set.frame_id;
  out.view = set.view;
  std::vector<int> order(set.items.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return set.items[a].confidence > set.items[b].confidence;
  });
  std::vector<char> suppressed(set.items.size(), 0);
  for (size_t oi = 0; oi < order.size(); ++oi) {
    const int i = order[oi];
    if (suppressed[i]) continue;
    out.items.push_back(set.items[i]);
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      const int j = order[oj];
      if (suppressed[j]) continue;
      if (rotated_iou_bev(set.items[i].box, set.items[j].box) >= eta) {
        suppressed[j] = 1;
      }
    }
  }
  return out;
}

}  // namespace ums
