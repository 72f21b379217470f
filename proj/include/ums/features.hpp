#pragma once

// Box-local geometric instance features. These replace a learned point
// encoder: each proposal crop maps to a fixed-length descriptor consumed by
// the purifying classifier and the weak-detector scorers.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "ums/geometry.hpp"

namespace ums {

inline constexpr int kInstanceFeatureDim = 12;

struct InstanceFeatures {
  double point_count_log = 0.0;  // log(1 + n)
  double bev_extent_l = 0.0;
  double bev_extent_w = 0.0;
  double height_extent = 0.0;
  double point_density = 0.0;  // log(1 + points / m^3) of the crop volume
  double pca_eigen_ratio_1 = 0.0;
  double pca_eigen_ratio_2 = 0.0;
  double mean_height_above_ground = 0.0;
  std::array<double, 4> vertical_histogram{0.0, 0.0, 0.0, 0.0};

  std::array<double, kInstanceFeatureDim> as_vector() const {
    return {point_count_log,
            bev_extent_l,
            bev_extent_w,
            height_extent,
            point_density,
            pca_eigen_ratio_1,
            pca_eigen_ratio_2,
            mean_height_above_ground,
            vertical_histogram[0],
            vertical_histogram[1],
            vertical_histogram[2],
            vertical_histogram[3]};
  }
};

namespace detail {

// Eigenvalues of a symmetric 3x3 matrix, descending, via the trigonometric
// closed form (Smith's method).
inline std::array<double, 3> sym3_eigenvalues(double a00, double a01, double a02,
                                              double a11, double a12, double a22) {
  const double p1 = a01 * a01 + a02 * a02 + a12 * a12;
  if (p1 < 1e-24) {
    std::array<double, 3> e{a00, a11, a22};
    std::sort(e.begin(), e.end(), std::greater<>());
    return e;
  }
  const double q = (a00 + a11 + a22) / 3.0;
  const double b00 = a00 - q, b11 = a11 - q, b22 = a22 - q;
  const double p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  // r = det(B) / 2 with B = (A - qI) / p
  const double inv_p = 1.0 / p;
  const double c00 = b00 * inv_p, c01 = a01 * inv_p, c02 = a02 * inv_p;
  const double c11 = b11 * inv_p, c12 = a12 * inv_p, c22 = b22 * inv_p;
  double r = (c00 * (c11 * c22 - c12 * c12) - c01 * (c01 * c22 - c12 * c02) +
              c02 * (c01 * c12 - c11 * c02)) /
             2.0;
  r = std::clamp(r, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double e0 = q + 2.0 * p * std::cos(phi);
  const double e2 = q + 2.0 * p * std::cos(phi + 2.0 * kPi / 3.0);
  const double e1 = 3.0 * q - e0 - e2;
  std::array<double, 3> e{e0, e1, e2};
  std::sort(e.begin(), e.end(), std::greater<>());
  return e;
}

}  // namespace detail

/// Principal BEV axis angle of a point set (closed-form 2x2 eigenvector).
inline double bev_principal_axis(const std::vector<Point3>& pts) {
  if (pts.size() < 2) return 0.0;
  double mx = 0.0, my = 0.0;
  for (const Point3& p : pts) {
    mx += p.x;
    my += p.y;
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double cxx = 0.0, cxy = 0.0, cyy = 0.0;
  for (const Point3& p : pts) {
    const double dx = p.x - mx, dy = p.y - my;
    cxx += dx * dx;
    cxy += dx * dy;
    cyy += dy * dy;
  }
  if (std::abs(cxy) < 1e-12 && std::abs(cxx - cyy) < 1e-12) return 0.0;
  return 0.5 * std::atan2(2.0 * cxy, cxx - cyy);
}

/// Features of a crop expressed in box-local coordinates (center at origin,
/// heading along +x). `box` supplies the world-frame center height and the
/// height slab for the vertical histogram.
inline InstanceFeatures compute_instance_features(
    const std::vector<Point3>& local_points, const Box3D& box) {
  InstanceFeatures f;
  const size_t n = local_points.size();
  f.point_count_log = std::log(1.0 + static_cast<double>(n));
  if (n == 0) return f;  // all-zero apart from the (log 1 = 0) count

  double min_x = 1e30, max_x = -1e30, min_y = 1e30, max_y = -1e30;
  double min_z = 1e30, max_z = -1e30;
  double mx = 0.0, my = 0.0, mz = 0.0;
  for (const Point3& p : local_points) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
    min_z = std::min(min_z, p.z);
    max_z = std::max(max_z, p.z);
    mx += p.x;
    my += p.y;
    mz += p.z;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  mx *= inv_n;
  my *= inv_n;
  mz *= inv_n;

  f.bev_extent_l = max_x - min_x;
  f.bev_extent_w = max_y - min_y;
  f.height_extent = max_z - min_z;
  // Clamp the crop volume from below so near-degenerate crops stay bounded.
  const double vol = std::max(0.05, f.bev_extent_l * f.bev_extent_w * f.height_extent);
  // Log scale keeps this feature commensurate with the others, which matters
  // for the conditioning of the plain gradient-descent fits downstream.
  f.point_density = std::log(1.0 + static_cast<double>(n) / vol);
  f.mean_height_above_ground = box.cz + mz;

  double cxx = 0.0, cxy = 0.0, cxz = 0.0, cyy = 0.0, cyz = 0.0, czz = 0.0;
  for (const Point3& p : local_points) {
    const double dx = p.x - mx, dy = p.y - my, dz = p.z - mz;
    cxx += dx * dx;
    cxy += dx * dy;
    cxz += dx * dz;
    cyy += dy * dy;
    cyz += dy * dz;
    czz += dz * dz;
  }
  const auto ev = detail::sym3_eigenvalues(cxx * inv_n, cxy * inv_n, cxz * inv_n,
                                           cyy * inv_n, cyz * inv_n, czz * inv_n);
  const double lead = std::max(ev[0], 1e-12);
  f.pca_eigen_ratio_1 = std::clamp(ev[1] / lead, 0.0, 1.0);
  f.pca_eigen_ratio_2 = std::clamp(ev[2] / lead, 0.0, 1.0);

  std::array<int, 4> hist{0, 0, 0, 0};
  const double hh = 0.5 * box.h;
  for (const Point3& p : local_points) {
    const double u = (p.z + hh) / std::max(box.h, 1e-9);  // 0 bottom .. 1 top
    int bin = static_cast<int>(u * 4.0);
    bin = std::clamp(bin, 0, 3);
    ++hist[bin];
  }
  for (int b = 0; b < 4; ++b) {
    f.vertical_histogram[b] = static_cast<double>(hist[b]) * inv_n;
  }
  return f;
}

}  // namespace ums
