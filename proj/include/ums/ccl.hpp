#pragma once

// Cross-View Consensus Learning: unmatched-but-supported multi-view proposals
// merged into ego pseudo labels, plus masked BEV alignment between the two
// views' statistical rasterizations.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ums/geometry.hpp"

namespace ums {

struct BevSpec {
  int H = 280;
  int W = 280;
  int C = 4;  // log point count, max height, mean height, occupancy
  double cell_size = 0.5;
  double origin_x = -70.0;  // ego-frame position of cell (0, 0)
  double origin_y = -70.0;

  bool operator==(const BevSpec&) const = default;
};

struct BevGrid {
  BevSpec spec;
  std::vector<double> values;  // H * W * C, row-major (i, j, c)

  explicit BevGrid(const BevSpec& s = {})
      : spec(s), values(static_cast<size_t>(s.H) * s.W * s.C, 0.0) {}

  double& at(int i, int j, int c) {
    return values[(static_cast<size_t>(i) * spec.W + j) * spec.C + c];
  }
  double at(int i, int j, int c) const {
    return values[(static_cast<size_t>(i) * spec.W + j) * spec.C + c];
  }
};

struct VisibilityMask {
  int H = 0, W = 0;
  double gamma = 0.0;
  std::vector<uint8_t> values;  // H * W

  uint8_t at(int i, int j) const { return values[static_cast<size_t>(i) * W + j]; }
};

/// Multi-view proposals with no ego match (max IoU < eta_ccl against every ego
/// proposal) and at least rho supporting ego points.
inline ProposalSet unmatched_valid_set(const ProposalSet& ego_filtered,
                                       const ProposalSet& multi_filtered,
                                       const PointCloud& ego_cloud, double eta_ccl,
                                       int rho) {
  if (!(eta_ccl > 0.0 && eta_ccl < 1.0)) {
    throw std::invalid_argument("unmatched_valid_set: eta_ccl must lie in (0,1)");
  }
  if (rho < 0) throw std::invalid_argument("unmatched_valid_set: rho must be >= 0");
  ProposalSet out;
  out.frame_id = multi_filtered.frame_id;
  out.view = multi_filtered.view;
  for (const Proposal& pm : multi_filtered.items) {
    bool matched = false;
    for (const Proposal& pe : ego_filtered.items) {
      if (rotated_iou_bev(pe.box, pm.box) >= eta_ccl) {
        matched = true;
        break;
      }
    }
    if (matched) continue;
    if (points_in_box(ego_cloud, pm.box).count < rho) continue;
    out.items.push_back(pm);
  }
  return out;
}

/// Consensus pseudo labels: NMS over ego proposals united with the unmatched
/// valid set.
inline ProposalSet consensus_labels(const ProposalSet& ego_filtered,
                                    const ProposalSet& unmatched, double eta_ccl) {
  ProposalSet unioned;
  unioned.frame_id = ego_filtered.frame_id;
  unioned.view = View::ego;
  unioned.items = ego_filtered.items;
  unioned.items.insert(unioned.items.end(), unmatched.items.begin(),
                       unmatched.items.end());
  return nms(unioned, eta_ccl);
}

/// Statistical BEV rasterization: per cell log(1+count), max z, mean z and
/// binary occupancy. Points outside the extent are dropped.
inline BevGrid bev_rasterize(const PointCloud& cloud, const BevSpec& spec) {
  if (spec.H <= 0 || spec.W <= 0 || spec.C != 4 || spec.cell_size <= 0.0) {
    throw std::invalid_argument("bev_rasterize: invalid grid spec");
  }
  BevGrid grid(spec);
  std::vector<int> counts(static_cast<size_t>(spec.H) * spec.W, 0);
  std::vector<double> sum_z(counts.size(), 0.0);
  std::vector<double> max_z(counts.size(), 0.0);
  for (const Point3& p : cloud.points) {
    const int i = static_cast<int>(std::floor((p.x - spec.origin_x) / spec.cell_size));
    const int j = static_cast<int>(std::floor((p.y - spec.origin_y) / spec.cell_size));
    if (i < 0 || i >= spec.H || j < 0 || j >= spec.W) continue;
    const size_t cell = static_cast<size_t>(i) * spec.W + j;
    if (counts[cell] == 0 || p.z > max_z[cell]) max_z[cell] = p.z;
    sum_z[cell] += p.z;
    ++counts[cell];
  }
  for (int i = 0; i < spec.H; ++i) {
    for (int j = 0; j < spec.W; ++j) {
      const size_t cell = static_cast<size_t>(i) * spec.W + j;
      if (counts[cell] == 0) continue;
      grid.at(i, j, 0) = std::log(1.0 + static_cast<double>(counts[cell]));
      grid.at(i, j, 1) = max_z[cell];
      grid.at(i, j, 2) = sum_z[cell] / static_cast<double>(counts[cell]);
      grid.at(i, j, 3) = 1.0;
    }
  }
  return grid;
}

/// M(i,j) = 1 iff the channel mean of F_e(i,j,:) is at least gamma.
inline VisibilityMask visibility_mask(const BevGrid& ego_grid, double gamma) {
  if (gamma < 0.0) throw std::invalid_argument("visibility_mask: gamma must be >= 0");
  VisibilityMask mask;
  mask.H = ego_grid.spec.H;
  mask.W = ego_grid.spec.W;
  mask.gamma = gamma;
  mask.values.assign(static_cast<size_t>(mask.H) * mask.W, 0);
  const double inv_c = 1.0 / ego_grid.spec.C;
  for (int i = 0; i < mask.H; ++i) {
    for (int j = 0; j < mask.W; ++j) {
      double mean = 0.0;
      for (int c = 0; c < ego_grid.spec.C; ++c) mean += ego_grid.at(i, j, c);
      mean *= inv_c;
      mask.values[static_cast<size_t>(i) * mask.W + j] = mean >= gamma ? 1 : 0;
    }
  }
  return mask;
}

struct AlignmentResult {
  double loss = 0.0;
  std::vector<double> grad_ego;  // d loss / d F_e, same layout as the grid
};

/// Masked squared alignment: loss = (1/Z) sum_{masked cells, channels}
/// (F_e - F_m)^2 with Z the count of visible cells. Z = 0 yields zero loss
/// and zero gradient.
inline AlignmentResult bev_alignment_loss(const BevGrid& ego_grid,
                                          const BevGrid& multi_grid,
                                          const VisibilityMask& mask) {
  if (!(ego_grid.spec == multi_grid.spec) || mask.H != ego_grid.spec.H ||
      mask.W != ego_grid.spec.W) {
    throw std::invalid_argument("bev_alignment_loss: shape mismatch");
  }
  AlignmentResult res;
  res.grad_ego.assign(ego_grid.values.size(), 0.0);
  size_t z_count = 0;
  for (uint8_t m : mask.values) z_count += m;
  if (z_count == 0) return res;
  const double inv_z = 1.0 / static_cast<double>(z_count);
  const int C = ego_grid.spec.C;
  for (int i = 0; i < mask.H; ++i) {
    for (int j = 0; j < mask.W; ++j) {
      if (!mask.at(i, j)) continue;
      for (int c = 0; c < C; ++c) {
        const size_t idx = (static_cast<size_t>(i) * mask.W + j) * C + c;
        const double d = ego_grid.values[idx] - multi_grid.values[idx];
        res.loss += d * d * inv_z;
        res.grad_ego[idx] = 2.0 * d * inv_z;
      }
    }
  }
  return res;
}

/// mu3-scaled alignment gradient under the visibility mask of the ego grid.
inline std::vector<double> ccl_guidance(const BevGrid& ego_grid,
                                        const BevGrid& multi_grid, double gamma,
                                        double mu3) {
  const VisibilityMask mask = visibility_mask(ego_grid, gamma);
  AlignmentResult res = bev_alignment_loss(ego_grid, multi_grid, mask);
  for (double& g : res.grad_ego) g *= mu3;
  return res.grad_ego;
}

/// Mean absolute masked cell difference within a box footprint; the auxiliary
/// scorer input that carries the alignment signal into the ego detector.
inline double proposal_bev_discrepancy(const BevGrid& ego_grid,
                                       const BevGrid& multi_grid,
                                       const VisibilityMask& mask,
                                       const Box3D& box) {
  const BevSpec& spec = ego_grid.spec;
  const auto corners = box.bev_corners();
  double min_x = corners[0].x, max_x = corners[0].x;
  double min_y = corners[0].y, max_y = corners[0].y;
  for (const Vec2& c : corners) {
    min_x = std::min(min_x, c.x);
    max_x = std::max(max_x, c.x);
    min_y = std::min(min_y, c.y);
    max_y = std::max(max_y, c.y);
  }
  const int i0 = std::max(0, static_cast<int>(std::floor((min_x - spec.origin_x) / spec.cell_size)));
  const int i1 = std::min(spec.H - 1, static_cast<int>(std::floor((max_x - spec.origin_x) / spec.cell_size)));
  const int j0 = std::max(0, static_cast<int>(std::floor((min_y - spec.origin_y) / spec.cell_size)));
  const int j1 = std::min(spec.W - 1, static_cast<int>(std::floor((max_y - spec.origin_y) / spec.cell_size)));
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  double sum = 0.0;
  size_t n = 0;
  for (int i = i0; i <= i1; ++i) {
    for (int j = j0; j <= j1; ++j) {
      const double x = spec.origin_x + (i + 0.5) * spec.cell_size - box.cx;
      const double y = spec.origin_y + (j + 0.5) * spec.cell_size - box.cy;
      const double lx = c * x + s * y, ly = -s * x + c * y;
      if (std::abs(lx) > 0.5 * box.l || std::abs(ly) > 0.5 * box.w) continue;
      if (!mask.at(i, j)) continue;
      for (int ch = 0; ch < spec.C; ++ch) {
        sum += std::abs(ego_grid.at(i, j, ch) - multi_grid.at(i, j, ch));
        ++n;
      }
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace ums
