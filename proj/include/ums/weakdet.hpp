#pragma once

// Lightweight stand-in for the deep detectors: a grid-connected-component
// cluster proposer, a logistic confidence scorer over instance features, and
// a per-dimension affine box refiner. Fit against pseudo labels with focal
// classification and smooth-L1 regression losses; the ego branch can feed a
// masked BEV discrepancy through an auxiliary scorer feature.

#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ums/features.hpp"
#include "ums/geometry.hpp"
#include "ums/ppf.hpp"

namespace ums {

inline constexpr int kScorerDim = kInstanceFeatureDim + 1;  // + BEV aux slot
inline constexpr int kAuxFeatureIndex = kInstanceFeatureDim;

struct LossWeights {
  double mu1 = 1.0;
  double mu2 = 1.0;
  double mu3 = 1.5;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double smooth_l1_beta = 1.0;
};

struct DetectorModel {
  std::vector<double> scorer_weights = std::vector<double>(kScorerDim, 0.0);
  double scorer_bias = 0.0;
  // Affine correction {scale, bias} for l, w, h, cz of the raw cluster box.
  std::array<std::array<double, 2>, 4> box_offset{{{1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}}};
  int min_cluster_points = 5;
  double cluster_cell_size = 0.5;
  double ground_z_threshold = 0.3;
  double min_confidence = 0.01;
};

/// Standard focal loss; p is clamped away from {0,1} at 1e-7.
inline double focal_loss(double p, int y, double alpha, double gamma) {
  p = std::min(std::max(p, 1e-7), 1.0 - 1e-7);
  if (y == 1) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

/// d focal / d z with p = sigmoid(z).
inline double focal_loss_dz(double p, int y, double alpha, double gamma) {
  p = std::min(std::max(p, 1e-7), 1.0 - 1e-7);
  if (y == 1) {
    return alpha * gamma * p * std::pow(1.0 - p, gamma) * std::log(p) -
           alpha * std::pow(1.0 - p, gamma + 1.0);
  }
  return -(1.0 - alpha) * gamma * std::pow(p, gamma) * (1.0 - p) * std::log(1.0 - p) +
         (1.0 - alpha) * std::pow(p, gamma + 1.0);
}

inline double smooth_l1(double residual, double beta) {
  if (beta <= 0.0) throw std::invalid_argument("smooth_l1: beta must be positive");
  const double a = std::abs(residual);
  if (a < beta) return 0.5 * residual * residual / beta;
  return a - 0.5 * beta;
}

inline double smooth_l1_grad(double residual, double beta) {
  const double a = std::abs(residual);
  if (a < beta) return residual / beta;
  return residual > 0.0 ? 1.0 : (residual < 0.0 ? -1.0 : 0.0);
}

/// One cluster before scoring: final box under the current offsets, its raw
/// dimensions, instance features and the auxiliary BEV discrepancy input.
struct ClusterCandidate {
  Box3D box;
  std::array<double, 4> raw_dims{0, 0, 0, 0};  // l0, w0, h0, cz0
  std::array<double, kScorerDim> features{};
  double confidence = 0.0;
};

using AuxFeatureFn = std::function<double(const Box3D&)>;

namespace detail {

struct CellKey {
  int64_t ix, iy;
  bool operator<(const CellKey& o) const {
    return ix != o.ix ? ix < o.ix : iy < o.iy;
  }
};

struct DisjointSet {
  std::vector<int> parent;
  explicit DisjointSet(int n) : parent(n) {
    for (int i = 0; i < n; ++i) parent[i] = i;
  }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

/// 8-connected BEV grid clustering of non-ground points. Cluster order is
/// deterministic: ascending by smallest member point index.
inline std::vector<std::vector<int>> grid_cluster(const PointCloud& cloud,
                                                  double cell_size,
                                                  double ground_z) {
  std::vector<int> keep;
  for (int i = 0; i < static_cast<int>(cloud.points.size()); ++i) {
    if (cloud.points[i].z >= ground_z) keep.push_back(i);
  }
  std::map<CellKey, int> cell_of;  // cell -> dense cell id
  std::vector<CellKey> cells;
  std::vector<std::vector<int>> cell_points;
  for (int idx : keep) {
    const Point3& p = cloud.points[idx];
    const CellKey key{static_cast<int64_t>(std::floor(p.x / cell_size)),
                      static_cast<int64_t>(std::floor(p.y / cell_size))};
    auto it = cell_of.find(key);
    if (it == cell_of.end()) {
      it = cell_of.emplace(key, static_cast<int>(cells.size())).first;
      cells.push_back(key);
      cell_points.emplace_back();
    }
    cell_points[it->second].push_back(idx);
  }
  DisjointSet ds(static_cast<int>(cells.size()));
  for (size_t c = 0; c < cells.size(); ++c) {
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        if (dx == 0 && dy == 0) continue;
        auto it = cell_of.find({cells[c].ix + dx, cells[c].iy + dy});
        if (it != cell_of.end()) ds.unite(static_cast<int>(c), it->second);
      }
    }
  }
  std::map<int, std::vector<int>> groups;
  for (size_t c = 0; c < cells.size(); ++c) {
    auto& g = groups[ds.find(static_cast<int>(c))];
    g.insert(g.end(), cell_points[c].begin(), cell_points[c].end());
  }
  std::vector<std::vector<int>> out;
  for (auto& [root, pts] : groups) {
    std::sort(pts.begin(), pts.end());
    out.push_back(std::move(pts));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

}  // namespace detail

/// Clusters of the cloud turned into candidate boxes and scorer inputs; shared
/// by propose and fit_detector.
inline std::vector<ClusterCandidate> extract_candidates(
    const DetectorModel& model, const PointCloud& cloud,
    const AuxFeatureFn& aux = nullptr) {
  const auto clusters = detail::grid_cluster(cloud, model.cluster_cell_size,
                                             model.ground_z_threshold);
  std::vector<ClusterCandidate> out;
  for (const auto& idx : clusters) {
    if (static_cast<int>(idx.size()) < model.min_cluster_points) continue;
    std::vector<Point3> pts;
    pts.reserve(idx.size());
    for (int i : idx) pts.push_back(cloud.points[i]);

    const double psi = bev_principal_axis(pts);
    const double c = std::cos(psi), s = std::sin(psi);
    double min_u = 1e30, max_u = -1e30, min_v = 1e30, max_v = -1e30;
    double min_z = 1e30, max_z = -1e30;
    for (const Point3& p : pts) {
      const double u = c * p.x + s * p.y;
      const double v = -s * p.x + c * p.y;
      min_u = std::min(min_u, u);
      max_u = std::max(max_u, u);
      min_v = std::min(min_v, v);
      max_v = std::max(max_v, v);
      min_z = std::min(min_z, p.z);
      max_z = std::max(max_z, p.z);
    }
    ClusterCandidate cand;
    cand.raw_dims = {std::max(0.1, max_u - min_u), std::max(0.1, max_v - min_v),
                     std::max(0.1, max_z - min_z), 0.5 * (min_z + max_z)};
    const double cu = 0.5 * (min_u + max_u), cv = 0.5 * (min_v + max_v);
    Box3D box;
    box.cx = c * cu - s * cv;
    box.cy = s * cu + c * cv;
    box.yaw = normalize_yaw(psi);
    box.l = std::max(0.1, model.box_offset[0][0] * cand.raw_dims[0] + model.box_offset[0][1]);
    box.w = std::max(0.1, model.box_offset[1][0] * cand.raw_dims[1] + model.box_offset[1][1]);
    box.h = std::max(0.1, model.box_offset[2][0] * cand.raw_dims[2] + model.box_offset[2][1]);
    box.cz = model.box_offset[3][0] * cand.raw_dims[3] + model.box_offset[3][1];
    cand.box = box;

    std::vector<Point3> local;
    local.reserve(pts.size());
    const double bc = std::cos(box.yaw), bs = std::sin(box.yaw);
    for (const Point3& p : pts) {
      const double dx = p.x - box.cx, dy = p.y - box.cy;
      local.push_back({bc * dx + bs * dy, -bs * dx + bc * dy, p.z - box.cz});
    }
    const auto feats = compute_instance_features(local, box).as_vector();
    for (int d = 0; d < kInstanceFeatureDim; ++d) cand.features[d] = feats[d];
    cand.features[kAuxFeatureIndex] = aux ? aux(box) : 0.0;

    double z = model.scorer_bias;
    for (int d = 0; d < kScorerDim; ++d) z += model.scorer_weights[d] * cand.features[d];
    cand.confidence = sigmoid(z);
    out.push_back(std::move(cand));
  }
  return out;
}

/// Candidate proposals of a cloud: cluster, score, drop below min confidence.
inline ProposalSet propose(const DetectorModel& model, const PointCloud& cloud,
                           const AuxFeatureFn& aux = nullptr,
                           const std::string& frame_id = {},
                           View view = View::multi) {
  ProposalSet set;
  set.frame_id = frame_id;
  set.view = view;
  for (const ClusterCandidate& cand : extract_candidates(model, cloud, aux)) {
    if (cand.confidence < model.min_confidence) continue;
    set.items.push_back({cand.box, cand.confidence});
  }
  return set;
}

// ---- fitting ---------------------------------------------------------------

struct FitRow {
  std::array<double, kScorerDim> features{};
  int label = 0;
  bool matched = false;
  std::array<double, 4> raw_dims{0, 0, 0, 0};
  std::array<double, 4> target_dims{0, 0, 0, 0};  // l, w, h, cz of pseudo box
};

struct FitParams {
  std::vector<double> weights = std::vector<double>(kScorerDim, 0.0);
  double bias = 0.0;
  std::array<std::array<double, 2>, 4> box_offset{{{1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}}};
};

namespace detail {

/// Per-feature affine normalization for the scorer optimization. The loss is
/// invariant under this reparameterization, but gradient descent converges far
/// faster on z-scored inputs; weights are folded back to raw space afterwards.
struct FeatureNorm {
  std::array<double, kScorerDim> mean{};
  std::array<double, kScorerDim> std{};

  static FeatureNorm fit(const std::vector<FitRow>& rows) {
    FeatureNorm n;
    n.std.fill(1.0);
    if (rows.empty()) return n;
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (const FitRow& r : rows) {
      for (int d = 0; d < kScorerDim; ++d) n.mean[d] += r.features[d];
    }
    for (int d = 0; d < kScorerDim; ++d) n.mean[d] *= inv;
    std::array<double, kScorerDim> var{};
    for (const FitRow& r : rows) {
      for (int d = 0; d < kScorerDim; ++d) {
        const double c = r.features[d] - n.mean[d];
        var[d] += c * c;
      }
    }
    for (int d = 0; d < kScorerDim; ++d) {
      const double s = std::sqrt(var[d] * inv);
      n.std[d] = s > 1e-9 ? s : 1.0;  // constant feature: leave untouched
    }
    return n;
  }

  std::vector<FitRow> apply(std::vector<FitRow> rows) const {
    for (FitRow& r : rows) {
      for (int d = 0; d < kScorerDim; ++d) {
        r.features[d] = (r.features[d] - mean[d]) / std[d];
      }
    }
    return rows;
  }

  void scorer_to_norm(std::vector<double>& w, double& b) const {
    for (int d = 0; d < kScorerDim; ++d) {
      b += w[d] * mean[d];
      w[d] *= std[d];
    }
  }

  void scorer_to_raw(std::vector<double>& w, double& b) const {
    for (int d = 0; d < kScorerDim; ++d) {
      w[d] /= std[d];
      b -= w[d] * mean[d];
    }
  }
};

}  // namespace detail

/// mu1 * mean focal + mu2 * mean smooth-L1 over matched (l,w,h,cz) residuals.
/// Exposed so tests can run finite differences against the analytic gradient.
inline double fit_loss_and_grad(const std::vector<FitRow>& rows,
                                const FitParams& params, const LossWeights& lw,
                                FitParams* grad) {
  if (grad != nullptr) {
    grad->weights.assign(kScorerDim, 0.0);
    grad->bias = 0.0;
    grad->box_offset = {{{0, 0}, {0, 0}, {0, 0}, {0, 0}}};
  }
  double cls = 0.0, reg = 0.0;
  size_t matched = 0;
  for (const FitRow& r : rows) {
    double z = params.bias;
    for (int d = 0; d < kScorerDim; ++d) z += params.weights[d] * r.features[d];
    const double p = sigmoid(z);
    cls += focal_loss(p, r.label, lw.focal_alpha, lw.focal_gamma);
    if (grad != nullptr) {
      const double dz = focal_loss_dz(p, r.label, lw.focal_alpha, lw.focal_gamma);
      for (int d = 0; d < kScorerDim; ++d) grad->weights[d] += dz * r.features[d];
      grad->bias += dz;
    }
    if (r.matched) ++matched;
  }
  const double inv_n = rows.empty() ? 0.0 : 1.0 / static_cast<double>(rows.size());
  cls *= inv_n;
  if (grad != nullptr) {
    for (int d = 0; d < kScorerDim; ++d) grad->weights[d] *= lw.mu1 * inv_n;
    grad->bias *= lw.mu1 * inv_n;
  }
  if (matched > 0) {
    const double inv_m = 1.0 / static_cast<double>(4 * matched);
    for (const FitRow& r : rows) {
      if (!r.matched) continue;
      for (int d = 0; d < 4; ++d) {
        const double pred = params.box_offset[d][0] * r.raw_dims[d] + params.box_offset[d][1];
        const double res = pred - r.target_dims[d];
        reg += smooth_l1(res, lw.smooth_l1_beta);
        if (grad != nullptr) {
          const double g = lw.mu2 * inv_m * smooth_l1_grad(res, lw.smooth_l1_beta);
          grad->box_offset[d][0] += g * r.raw_dims[d];
          grad->box_offset[d][1] += g;
        }
      }
    }
    reg *= inv_m;
  }
  return lw.mu1 * cls + lw.mu2 * reg;
}

struct FitFrame {
  std::string frame_id;
  const PointCloud* cloud = nullptr;
  const ProposalSet* pseudo = nullptr;
  AuxFeatureFn aux;          // empty for the multi-view branch
  double bev_loss = 0.0;     // per-frame alignment loss, reported via mu3
};

struct FitResult {
  DetectorModel model;
  std::vector<double> loss_trace;  // one entry per epoch, non-increasing
  size_t matched_pairs = 0;
};

/// Build the labeled dataset once (match threshold IoU 0.3), then run E epochs
/// of gradient descent with step halving on loss increase.
inline FitResult fit_detector(const DetectorModel& model,
                              const std::vector<FitFrame>& frames,
                              const LossWeights& lw, int epochs,
                              double step = 0.1) {
  if (epochs < 1) throw std::invalid_argument("fit_detector: epochs must be >= 1");
  constexpr double kMatchIou = 0.3;
  std::vector<FitRow> rows;
  double bev_total = 0.0;
  for (const FitFrame& f : frames) {
    bev_total += f.bev_loss;
    for (const ClusterCandidate& cand : extract_candidates(model, *f.cloud, f.aux)) {
      FitRow row;
      row.features = cand.features;
      row.raw_dims = cand.raw_dims;
      double best = 0.0;
      const Box3D* best_box = nullptr;
      for (const Proposal& ps : f.pseudo->items) {
        const double iou = rotated_iou_bev(cand.box, ps.box);
        if (iou > best) {
          best = iou;
          best_box = &ps.box;
        }
      }
      if (best >= kMatchIou && best_box != nullptr) {
        row.label = 1;
        row.matched = true;
        row.target_dims = {best_box->l, best_box->w, best_box->h, best_box->cz};
      }
      rows.push_back(std::move(row));
    }
  }
  const double bev_mean =
      frames.empty() ? 0.0 : lw.mu3 * bev_total / static_cast<double>(frames.size());

  FitResult result;
  result.model = model;
  for (const FitRow& r : rows) {
    if (r.matched) ++result.matched_pairs;
  }
  if (result.matched_pairs == 0 && !rows.empty()) {
    std::fprintf(stderr, "fit_detector: no matched pairs, skipping regression update\n");
  }

  const detail::FeatureNorm norm = detail::FeatureNorm::fit(rows);
  rows = norm.apply(std::move(rows));
  FitParams params{model.scorer_weights, model.scorer_bias, model.box_offset};
  norm.scorer_to_norm(params.weights, params.bias);
  FitParams grad;
  double loss = fit_loss_and_grad(rows, params, lw, &grad);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    while (step > 1e-12) {
      FitParams trial = params;
      for (int d = 0; d < kScorerDim; ++d) trial.weights[d] -= step * grad.weights[d];
      trial.bias -= step * grad.bias;
      for (int d = 0; d < 4; ++d) {
        trial.box_offset[d][0] -= step * grad.box_offset[d][0];
        trial.box_offset[d][1] -= step * grad.box_offset[d][1];
      }
      FitParams trial_grad;
      const double trial_loss = fit_loss_and_grad(rows, trial, lw, &trial_grad);
      if (trial_loss <= loss) {
        params = std::move(trial);
        grad = std::move(trial_grad);
        loss = trial_loss;
        break;
      }
      step *= 0.5;
    }
    result.loss_trace.push_back(loss + bev_mean);
  }
  norm.scorer_to_raw(params.weights, params.bias);
  result.model.scorer_weights = params.weights;
  result.model.scorer_bias = params.bias;
  result.model.box_offset = params.box_offset;
  return result;
}

/// Scorer initialization from communicated-agent positional priors: clusters
/// overlapping a prior box are positives; clusters physically too small to be
/// a vehicle are negatives; everything else stays unlabeled. No ground truth
/// is involved.
struct PretrainFrame {
  const PointCloud* cloud = nullptr;
  std::vector<Box3D> prior_boxes;  // ego frame
};

inline DetectorModel pretrain_detector(DetectorModel model,
                                       const std::vector<PretrainFrame>& frames,
                                       const LossWeights& lw, int epochs = 800,
                                       double step = 0.2, double l2 = 1e-3) {
  constexpr double kMaxClutterExtent = 2.5;  // below the smallest vehicle length
  std::vector<FitRow> rows;
  for (const PretrainFrame& f : frames) {
    for (const ClusterCandidate& cand : extract_candidates(model, *f.cloud)) {
      double best = 0.0;
      for (const Box3D& prior : f.prior_boxes) {
        best = std::max(best, rotated_iou_bev(cand.box, prior));
      }
      FitRow row;
      row.features = cand.features;
      if (best >= 0.1) {
        row.label = 1;
      } else if (std::max(cand.features[1], cand.features[2]) < kMaxClutterExtent) {
        row.label = 0;
      } else {
        continue;  // vehicle-sized but unconfirmed: leave unlabeled
      }
      rows.push_back(std::move(row));
    }
  }
  if (rows.empty()) return model;

  LossWeights cls_only = lw;
  cls_only.mu2 = 0.0;
  const detail::FeatureNorm norm = detail::FeatureNorm::fit(rows);
  rows = norm.apply(std::move(rows));
  FitParams params{model.scorer_weights, model.scorer_bias, model.box_offset};
  norm.scorer_to_norm(params.weights, params.bias);
  auto loss_grad = [&](const FitParams& p, FitParams* g) {
    double L = fit_loss_and_grad(rows, p, cls_only, g);
    for (int d = 0; d < kScorerDim; ++d) {
      L += 0.5 * l2 * p.weights[d] * p.weights[d];
      if (g != nullptr) g->weights[d] += l2 * p.weights[d];
    }
    return L;
  };
  FitParams grad;
  double loss = loss_grad(params, &grad);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    while (step > 1e-12) {
      FitParams trial = params;
      for (int d = 0; d < kScorerDim; ++d) trial.weights[d] -= step * grad.weights[d];
      trial.bias -= step * grad.bias;
      FitParams trial_grad;
      const double trial_loss = loss_grad(trial, &trial_grad);
      if (trial_loss <= loss) {
        params = std::move(trial);
        grad = std::move(trial_grad);
        loss = trial_loss;
        break;
      }
      step *= 0.5;
    }
  }
  norm.scorer_to_raw(params.weights, params.bias);
  model.scorer_weights = params.weights;
  model.scorer_bias = params.bias;
  return model;
}

}  // namespace ums
