#pragma once

// Proposal Purifying Filter: a logistic instance classifier trained from
// confidence-extreme proposals. Positives and negatives come from the
// detector's own confidence distribution, never from ground truth.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ums/features.hpp"
#include "ums/geometry.hpp"

namespace ums {

class InsufficientSupervisionError : public std::runtime_error {
 public:
  explicit InsufficientSupervisionError(const std::string& what)
      : std::runtime_error(what) {}
};

inline double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Points inside the box, re-expressed in box-local coordinates (center at the
/// origin, heading along +x).
inline PointCloud crop(const PointCloud& cloud, const Box3D& box) {
  PointCloud out;
  out.source_agent = cloud.source_agent;
  const auto hit = points_in_box(cloud, box);
  out.points.reserve(hit.indices.size());
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  for (int idx : hit.indices) {
    const Point3& p = cloud.points[idx];
    const double dx = p.x - box.cx, dy = p.y - box.cy;
    out.points.push_back({c * dx + s * dy, -s * dx + c * dy, p.z - box.cz});
  }
  return out;
}

struct SelfSupSets {
  std::vector<std::pair<Proposal, PointCloud>> negatives;  // c <= c_low
  std::vector<std::pair<Proposal, PointCloud>> positives;  // c >= c_high
};

/// Split a proposal set at the confidence extremes; the middle band is
/// discarded. Throws InsufficientSupervisionError when either side is empty.
inline SelfSupSets select_training_sets(const ProposalSet& proposals,
                                        const PointCloud& cloud, double c_low,
                                        double c_high) {
  if (!(c_low >= 0.0 && c_low < c_high && c_high <= 1.0)) {
    throw std::invalid_argument("select_training_sets: need 0 <= c_low < c_high <= 1");
  }
  SelfSupSets sets;
  for (const Proposal& p : proposals.items) {
    if (p.confidence <= c_low) {
      sets.negatives.emplace_back(p, crop(cloud, p.box));
    } else if (p.confidence >= c_high) {
      sets.positives.emplace_back(p, crop(cloud, p.box));
    }
  }
  if (sets.negatives.empty() || sets.positives.empty()) {
    throw InsufficientSupervisionError(
        "select_training_sets: confidence extremes produced an empty set "
        "(negatives=" + std::to_string(sets.negatives.size()) +
        ", positives=" + std::to_string(sets.positives.size()) + ")");
  }
  return sets;
}

struct PpfClassifier {
  std::vector<double> weights;  // length kInstanceFeatureDim
  double bias = 0.0;
  std::vector<double> feat_mean;
  std::vector<double> feat_std;
  bool trained = false;

  double score(const InstanceFeatures& f) const {
    const auto v = f.as_vector();
    double z = bias;
    for (int i = 0; i < kInstanceFeatureDim; ++i) {
      z += weights[i] * (v[i] - feat_mean[i]) / feat_std[i];
    }
    return sigmoid(z);
  }
};

namespace detail {

struct LabeledFeatures {
  std::vector<std::array<double, kInstanceFeatureDim>> x;
  std::vector<int> y;
};

inline LabeledFeatures featurize_sets(const SelfSupSets& sets) {
  LabeledFeatures out;
  for (const auto& [prop, cr] : sets.negatives) {
    out.x.push_back(compute_instance_features(cr.points, prop.box).as_vector());
    out.y.push_back(0);
  }
  for (const auto& [prop, cr] : sets.positives) {
    out.x.push_back(compute_instance_features(cr.points, prop.box).as_vector());
    out.y.push_back(1);
  }
  return out;
}

/// Mean BCE and its gradient for a logistic model over standardized features.
inline double bce_and_gradient(const std::vector<std::array<double, kInstanceFeatureDim>>& x,
                               const std::vector<int>& y,
                               const std::vector<double>& w, double b,
                               std::vector<double>* gw, double* gb) {
  const size_t n = x.size();
  double loss = 0.0;
  gw->assign(kInstanceFeatureDim, 0.0);
  *gb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double z = b;
    for (int d = 0; d < kInstanceFeatureDim; ++d) z += w[d] * x[i][d];
    double p = sigmoid(z);
    p = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
    loss += y[i] ? -std::log(p) : -std::log(1.0 - p);
    const double dz = p - static_cast<double>(y[i]);
    for (int d = 0; d < kInstanceFeatureDim; ++d) (*gw)[d] += dz * x[i][d];
    *gb += dz;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  loss *= inv_n;
  for (int d = 0; d < kInstanceFeatureDim; ++d) (*gw)[d] *= inv_n;
  *gb *= inv_n;
  return loss;
}

}  // namespace detail

/// Fit the logistic head by full-batch gradient descent with step halving, so
/// the recorded per-epoch loss sequence is non-increasing. Features are
/// standardized by training-set statistics stored in the classifier.
inline PpfClassifier train_ppf(const SelfSupSets& sets, int epochs = 200,
                               double step = 0.5) {
  if (sets.negatives.empty() || sets.positives.empty()) {
    throw InsufficientSupervisionError("train_ppf: both sets must be non-empty");
  }
  auto data = detail::featurize_sets(sets);
  const size_t n = data.x.size();

  PpfClassifier clf;
  clf.feat_mean.assign(kInstanceFeatureDim, 0.0);
  clf.feat_std.assign(kInstanceFeatureDim, 1.0);
  for (const auto& row : data.x) {
    for (int d = 0; d < kInstanceFeatureDim; ++d) clf.feat_mean[d] += row[d];
  }
  for (int d = 0; d < kInstanceFeatureDim; ++d) clf.feat_mean[d] /= static_cast<double>(n);
  std::vector<double> var(kInstanceFeatureDim, 0.0);
  for (const auto& row : data.x) {
    for (int d = 0; d < kInstanceFeatureDim; ++d) {
      const double dv = row[d] - clf.feat_mean[d];
      var[d] += dv * dv;
    }
  }
  for (int d = 0; d < kInstanceFeatureDim; ++d) {
    clf.feat_std[d] = std::max(1e-6, std::sqrt(var[d] / static_cast<double>(n)));
  }
  for (auto& row : data.x) {
    for (int d = 0; d < kInstanceFeatureDim; ++d) {
      row[d] = (row[d] - clf.feat_mean[d]) / clf.feat_std[d];
    }
  }

  clf.weights.assign(kInstanceFeatureDim, 0.0);
  std::vector<double> gw;
  double gb = 0.0;
  double loss = detail::bce_and_gradient(data.x, data.y, clf.weights, clf.bias, &gw, &gb);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    if (!std::isfinite(loss)) {
      throw std::runtime_error("train_ppf: non-finite loss at epoch " +
                               std::to_string(epoch));
    }
    while (step > 1e-12) {
      std::vector<double> w_try = clf.weights;
      for (int d = 0; d < kInstanceFeatureDim; ++d) w_try[d] -= step * gw[d];
      const double b_try = clf.bias - step * gb;
      std::vector<double> gw_try;
      double gb_try = 0.0;
      const double loss_try =
          detail::bce_and_gradient(data.x, data.y, w_try, b_try, &gw_try, &gb_try);
      if (loss_try <= loss) {
        clf.weights = std::move(w_try);
        clf.bias = b_try;
        loss = loss_try;
        gw = std::move(gw_try);
        gb = gb_try;
        break;
      }
      step *= 0.5;
    }
  }
  clf.trained = true;
  return clf;
}

/// Keep exactly the proposals whose crop scores q >= 0.5; survivors keep their
/// boxes, confidences and relative order.
inline ProposalSet ppf_filter(const PpfClassifier& clf, const ProposalSet& set,
                              const PointCloud& cloud) {
  if (!clf.trained) throw std::logic_error("ppf_filter: classifier not trained");
  ProposalSet out;
  out.frame_id = set.frame_id;
  out.view = set.view;
  for (const Proposal& p : set.items) {
    const PointCloud cr = crop(cloud, p.box);
    const InstanceFeatures f = compute_instance_features(cr.points, p.box);
    if (clf.score(f) >= 0.5) out.items.push_back(p);
  }
  return out;
}

}  // namespace ums
