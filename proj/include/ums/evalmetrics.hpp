#pragma once

// Ground-truth evaluation: greedy confidence-descending matching, precision /
// recall, all-point interpolated average precision, and range-banded splits.
// The only module allowed to touch simulator ground truth.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ums/geometry.hpp"

namespace ums {

struct MatchResult {
  std::vector<char> pred_is_tp;   // per prediction, input order
  std::vector<char> gt_matched;   // per ground-truth box
  int tp = 0;
  int fp = 0;
};

/// Greedy one-to-one assignment: predictions in confidence-descending order
/// each claim the highest-IoU unmatched GT with IoU >= iou_thr.
inline MatchResult match(const ProposalSet& preds, const std::vector<Box3D>& gts,
                         double iou_thr) {
  if (!(iou_thr > 0.0 && iou_thr < 1.0)) {
    throw std::invalid_argument("match: iou_thr must lie in (0,1)");
  }
  MatchResult res;
  res.pred_is_tp.assign(preds.items.size(), 0);
  res.gt_matched.assign(gts.size(), 0);
  std::vector<int> order(preds.items.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return preds.items[a].confidence > preds.items[b].confidence;
  });
  for (int pi : order) {
    double best = 0.0;
    int best_gt = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (res.gt_matched[g]) continue;
      const double iou = rotated_iou_bev(preds.items[pi].box, gts[g]);
      if (iou >= iou_thr && iou > best) {
        best = iou;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      res.pred_is_tp[pi] = 1;
      res.gt_matched[best_gt] = 1;
      ++res.tp;
    } else {
      ++res.fp;
    }
  }
  return res;
}

/// precision = TP/(TP+FP) with 0/0 := 1; recall = TP/|gts| with |gts|=0 := 1.
inline std::pair<double, double> precision_recall(const ProposalSet& preds,
                                                  const std::vector<Box3D>& gts,
                                                  double iou_thr) {
  const MatchResult m = match(preds, gts, iou_thr);
  const double precision =
      (m.tp + m.fp) == 0 ? 1.0 : static_cast<double>(m.tp) / (m.tp + m.fp);
  const double recall =
      gts.empty() ? 1.0 : static_cast<double>(m.tp) / static_cast<double>(gts.size());
  return {precision, recall};
}

/// One frame of an evaluation batch.
struct EvalFrame {
  const ProposalSet* preds = nullptr;
  const std::vector<Box3D>* gts = nullptr;
};

namespace detail {

struct ScoredFlag {
  double confidence;
  char is_tp;
};

/// All-point interpolated AP from pooled (confidence, tp) flags.
inline double ap_from_flags(std::vector<ScoredFlag> flags, size_t num_gt) {
  if (num_gt == 0) return 0.0;
  std::stable_sort(flags.begin(), flags.end(), [](const ScoredFlag& a, const ScoredFlag& b) {
    return a.confidence > b.confidence;
  });
  std::vector<double> precisions, recalls;
  int tp = 0, fp = 0;
  for (const ScoredFlag& f : flags) {
    if (f.is_tp) {
      ++tp;
    } else {
      ++fp;
    }
    precisions.push_back(static_cast<double>(tp) / (tp + fp));
    recalls.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
  }
  // Monotone non-increasing precision envelope.
  for (int i = static_cast<int>(precisions.size()) - 2; i >= 0; --i) {
    precisions[i] = std::max(precisions[i], precisions[i + 1]);
  }
  double ap = 0.0, prev_recall = 0.0;
  for (size_t i = 0; i < precisions.size(); ++i) {
    ap += (recalls[i] - prev_recall) * precisions[i];
    prev_recall = recalls[i];
  }
  return ap;
}

}  // namespace detail

/// AP pooled over a batch of frames (per-frame matching, global ranking).
inline double average_precision(const std::vector<EvalFrame>& frames, double iou_thr) {
  std::vector<detail::ScoredFlag> flags;
  size_t num_gt = 0;
  for (const EvalFrame& f : frames) {
    num_gt += f.gts->size();
    const MatchResult m = match(*f.preds, *f.gts, iou_thr);
    for (size_t i = 0; i < f.preds->items.size(); ++i) {
      flags.push_back({f.preds->items[i].confidence, m.pred_is_tp[i]});
    }
  }
  return detail::ap_from_flags(std::move(flags), num_gt);
}

inline double average_precision(const ProposalSet& preds,
                                const std::vector<Box3D>& gts, double iou_thr) {
  std::vector<EvalFrame> one{{&preds, &gts}};
  return average_precision(one, iou_thr);
}

struct RangeBand {
  double lo = 0.0;  // half-open [lo, hi) on BEV center distance
  double hi = 0.0;
};

inline const std::vector<RangeBand>& default_range_bands() {
  static const std::vector<RangeBand> bands{{0.0, 30.0}, {30.0, 50.0}, {50.0, 100.0}};
  return bands;
}

struct BandAp {
  RangeBand band;
  double ap = 0.0;
  size_t num_gt = 0;
  bool empty_gt = false;  // AP reported 0 over zero GT; excluded from averages
};

/// Partition predictions and GTs by box-center range and compute AP per band.
inline std::vector<BandAp> range_banded_ap(const std::vector<EvalFrame>& frames,
                                           double iou_thr,
                                           const std::vector<RangeBand>& bands) {
  auto in_band = [](const Box3D& b, const RangeBand& band) {
    const double r = std::hypot(b.cx, b.cy);
    return r >= band.lo && r < band.hi;
  };
  std::vector<BandAp> out;
  for (const RangeBand& band : bands) {
    std::vector<ProposalSet> band_preds;
    std::vector<std::vector<Box3D>> band_gts;
    band_preds.reserve(frames.size());
    band_gts.reserve(frames.size());
    for (const EvalFrame& f : frames) {
      ProposalSet ps;
      ps.frame_id = f.preds->frame_id;
      ps.view = f.preds->view;
      for (const Proposal& p : f.preds->items) {
        if (in_band(p.box, band)) ps.items.push_back(p);
      }
      std::vector<Box3D> gs;
      for (const Box3D& g : *f.gts) {
        if (in_band(g, band)) gs.push_back(g);
      }
      band_preds.push_back(std::move(ps));
      band_gts.push_back(std::move(gs));
    }
    std::vector<EvalFrame> band_frames;
    size_t num_gt = 0;
    for (size_t i = 0; i < frames.size(); ++i) {
      band_frames.push_back({&band_preds[i], &band_gts[i]});
      num_gt += band_gts[i].size();
    }
    BandAp ba;
    ba.band = band;
    ba.num_gt = num_gt;
    ba.empty_gt = num_gt == 0;
    ba.ap = num_gt == 0 ? 0.0 : average_precision(band_frames, iou_thr);
    out.push_back(ba);
  }
  return out;
}

struct EvalReport {
  double ap_03 = 0.0;
  double ap_05 = 0.0;
  double precision_05 = 0.0;
  double recall_05 = 0.0;
  std::vector<BandAp> range_banded;
  size_t frame_count = 0;
  size_t prediction_count = 0;
  size_t gt_count = 0;
};

inline EvalReport evaluate(const std::vector<EvalFrame>& frames) {
  EvalReport rep;
  rep.frame_count = frames.size();
  int tp = 0, fp = 0;
  size_t num_gt = 0;
  for (const EvalFrame& f : frames) {
    rep.prediction_count += f.preds->items.size();
    num_gt += f.gts->size();
    const MatchResult m = match(*f.preds, *f.gts, 0.5);
    tp += m.tp;
    fp += m.fp;
  }
  rep.gt_count = num_gt;
  rep.ap_03 = average_precision(frames, 0.3);
  rep.ap_05 = average_precision(frames, 0.5);
  rep.precision_05 = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp);
  rep.recall_05 = num_gt == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(num_gt);
  rep.range_banded = range_banded_ap(frames, 0.5, default_range_bands());
  return rep;
}

}  // namespace ums
