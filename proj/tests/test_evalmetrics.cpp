#include "ums/evalmetrics.hpp"

#include <gtest/gtest.h>

#include "ums/rng.hpp"

using namespace ums;

namespace {

Box3D box_at(double cx, double cy, double l = 4.0, double w = 2.0,
             double yaw = 0.0) {
  Box3D b;
  b.cx = cx;
  b.cy = cy;
  b.cz = 0.8;
  b.l = l;
  b.w = w;
  b.h = 1.6;
  b.yaw = yaw;
  return b;
}

/// Step-by-step reference of greedy matching (independent implementation).
MatchResult reference_match(const ProposalSet& preds,
                            const std::vector<Box3D>& gts, double thr) {
  MatchResult res;
  res.pred_is_tp.assign(preds.items.size(), 0);
  res.gt_matched.assign(gts.size(), 0);
  std::vector<std::pair<double, int>> order;
  for (size_t i = 0; i < preds.items.size(); ++i) {
    order.emplace_back(-preds.items[i].confidence, static_cast<int>(i));
  }
  std::stable_sort(order.begin(), order.end());
  for (const auto& [negc, pi] : order) {
    int best_gt = -1;
    double best = thr - 1e-18;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (res.gt_matched[g]) continue;
      const double iou = rotated_iou_bev(preds.items[pi].box, gts[g]);
      if (iou >= thr && iou > best) {
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

/// Independent all-point AP integrator working from scratch.
double reference_ap(std::vector<std::pair<double, int>> scored, size_t num_gt) {
  if (num_gt == 0) return 0.0;
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::pair<double, double>> pr;  // (recall, precision)
  int tp = 0, fp = 0;
  for (const auto& [conf, is_tp] : scored) {
    is_tp ? ++tp : ++fp;
    pr.emplace_back(static_cast<double>(tp) / num_gt,
                    static_cast<double>(tp) / (tp + fp));
  }
  double ap = 0.0;
  double prev_r = 0.0;
  for (size_t i = 0; i < pr.size(); ++i) {
    double env = 0.0;
    for (size_t j = i; j < pr.size(); ++j) env = std::max(env, pr[j].second);
    ap += (pr[i].first - prev_r) * env;
    prev_r = pr[i].first;
  }
  return ap;
}

}  // namespace

TEST(Match, PerfectAndEmptyCases) {
  std::vector<Box3D> gts{box_at(0, 0), box_at(10, 0), box_at(0, 10)};
  ProposalSet preds;
  for (const Box3D& g : gts) preds.items.push_back({g, 0.9});
  const MatchResult m = match(preds, gts, 0.5);
  EXPECT_EQ(m.tp, 3);
  EXPECT_EQ(m.fp, 0);
  for (char f : m.gt_matched) EXPECT_EQ(f, 1);

  const MatchResult none = match(ProposalSet{}, gts, 0.5);
  EXPECT_EQ(none.tp, 0);
  EXPECT_EQ(none.fp, 0);

  EXPECT_THROW(match(preds, gts, 0.0), std::invalid_argument);
}

TEST(Match, MatchesBruteForceReference) {
  Rng rng(51);
  for (int trial = 0; trial < 100; ++trial) {
    ProposalSet preds;
    std::vector<Box3D> gts;
    for (int i = 0; i < rng.uniform_int(0, 10); ++i) {
      preds.items.push_back(
          {box_at(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(2, 6),
                  rng.uniform(1, 3), rng.uniform(-kPi, kPi)),
           rng.uniform()});
    }
    for (int i = 0; i < rng.uniform_int(0, 5); ++i) {
      gts.push_back(box_at(rng.uniform(-10, 10), rng.uniform(-10, 10),
                           rng.uniform(2, 6), rng.uniform(1, 3),
                           rng.uniform(-kPi, kPi)));
    }
    const MatchResult a = match(preds, gts, 0.3);
    const MatchResult b = reference_match(preds, gts, 0.3);
    EXPECT_EQ(a.tp, b.tp);
    EXPECT_EQ(a.fp, b.fp);
    EXPECT_EQ(a.pred_is_tp, b.pred_is_tp);
    EXPECT_EQ(a.gt_matched, b.gt_matched);
  }
}

TEST(PrecisionRecall, ConventionsAndArithmetic) {
  std::vector<Box3D> gts{box_at(0, 0)};
  const auto perfect = precision_recall(
      [&] {
        ProposalSet p;
        p.items.push_back({gts[0], 1.0});
        return p;
      }(),
      gts, 0.5);
  EXPECT_DOUBLE_EQ(perfect.first, 1.0);
  EXPECT_DOUBLE_EQ(perfect.second, 1.0);

  const auto none = precision_recall(ProposalSet{}, gts, 0.5);
  EXPECT_DOUBLE_EQ(none.first, 1.0);  // 0/0 := 1
  EXPECT_DOUBLE_EQ(none.second, 0.0);

  // 3 TP / 1 FP over 5 GT.
  std::vector<Box3D> five;
  for (int i = 0; i < 5; ++i) five.push_back(box_at(10.0 * i, 0));
  ProposalSet preds;
  for (int i = 0; i < 3; ++i) preds.items.push_back({five[i], 0.9});
  preds.items.push_back({box_at(0, 50), 0.8});
  const auto pr = precision_recall(preds, five, 0.5);
  EXPECT_DOUBLE_EQ(pr.first, 0.75);
  EXPECT_DOUBLE_EQ(pr.second, 0.6);

  const auto empty_gt = precision_recall(ProposalSet{}, {}, 0.5);
  EXPECT_DOUBLE_EQ(empty_gt.second, 1.0);
}

TEST(AveragePrecision, HandComputedCases) {
  std::vector<Box3D> gts{box_at(0, 0)};
  ProposalSet perfect;
  perfect.items.push_back({gts[0], 0.9});
  EXPECT_DOUBLE_EQ(average_precision(perfect, gts, 0.5), 1.0);

  // FP at conf 0.9, then a TP at 0.8: precision at full recall is 1/2.
  ProposalSet mixed;
  mixed.items.push_back({box_at(0, 50), 0.9});
  mixed.items.push_back({gts[0], 0.8});
  EXPECT_DOUBLE_EQ(average_precision(mixed, gts, 0.5), 0.5);

  EXPECT_DOUBLE_EQ(average_precision(ProposalSet{}, gts, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(average_precision(perfect, {}, 0.5), 0.0);
}

TEST(AveragePrecision, MatchesIndependentIntegrator) {
  Rng rng(52);
  for (int trial = 0; trial < 100; ++trial) {
    ProposalSet preds;
    std::vector<Box3D> gts;
    for (int i = 0; i < rng.uniform_int(1, 6); ++i) {
      gts.push_back(box_at(12.0 * i, 0));
    }
    for (int i = 0; i < rng.uniform_int(0, 12); ++i) {
      const bool near_gt = rng.uniform() < 0.5;
      const int g = rng.uniform_int(0, static_cast<int>(gts.size()) - 1);
      const double cx = near_gt ? gts[g].cx + rng.uniform(-0.5, 0.5)
                                : rng.uniform(-40, -20);
      preds.items.push_back({box_at(cx, near_gt ? rng.uniform(-0.3, 0.3) : 30.0),
                             rng.uniform()});
    }
    const MatchResult m = match(preds, gts, 0.5);
    std::vector<std::pair<double, int>> scored;
    for (size_t i = 0; i < preds.items.size(); ++i) {
      scored.emplace_back(preds.items[i].confidence, m.pred_is_tp[i]);
    }
    EXPECT_NEAR(average_precision(preds, gts, 0.5),
                reference_ap(scored, gts.size()), 1e-9);
  }
}

TEST(AveragePrecision, InvariantUnderMonotoneConfidenceTransform) {
  Rng rng(53);
  std::vector<Box3D> gts;
  for (int i = 0; i < 4; ++i) gts.push_back(box_at(12.0 * i, 0));
  ProposalSet preds;
  for (int i = 0; i < 10; ++i) {
    preds.items.push_back({box_at(rng.uniform(-5, 42), rng.uniform(-1, 1)),
                           rng.uniform(0.05, 0.95)});
  }
  const double base = average_precision(preds, gts, 0.5);
  ProposalSet squashed = preds;
  for (Proposal& p : squashed.items) {
    p.confidence = 1.0 / (1.0 + std::exp(-3.0 * p.confidence));
  }
  EXPECT_NEAR(average_precision(squashed, gts, 0.5), base, 1e-12);
}

TEST(AveragePrecision, FpInjectionNeverRaisesAp) {
  Rng rng(54);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Box3D> gts{box_at(0, 0), box_at(12, 0)};
    ProposalSet preds;
    preds.items.push_back({gts[0], rng.uniform(0.5, 1.0)});
    preds.items.push_back({gts[1], rng.uniform(0.5, 1.0)});
    const double base = average_precision(preds, gts, 0.5);
    ProposalSet with_fp = preds;
    with_fp.items.push_back({box_at(0, 60), rng.uniform(0.0, 0.4)});
    EXPECT_LE(average_precision(with_fp, gts, 0.5), base + 1e-12);
  }
}

TEST(RangeBandedAp, EmptyBandConventionAndExhaustivePartition) {
  std::vector<Box3D> gts{box_at(5, 0), box_at(0, 10), box_at(20, 5)};
  ProposalSet preds;
  for (const Box3D& g : gts) preds.items.push_back({g, 0.9});
  std::vector<EvalFrame> frames{{&preds, &gts}};
  const auto bands = range_banded_ap(frames, 0.5, default_range_bands());
  ASSERT_EQ(bands.size(), 3u);
  EXPECT_EQ(bands[0].num_gt, 3u);
  EXPECT_FALSE(bands[0].empty_gt);
  EXPECT_DOUBLE_EQ(bands[0].ap, 1.0);
  EXPECT_TRUE(bands[1].empty_gt);
  EXPECT_DOUBLE_EQ(bands[1].ap, 0.0);
  EXPECT_TRUE(bands[2].empty_gt);
  size_t total = 0;
  for (const BandAp& b : bands) total += b.num_gt;
  EXPECT_EQ(total, gts.size());
}

TEST(Evaluate, AggregatesAcrossFrames) {
  std::vector<Box3D> gts0{box_at(5, 0)};
  std::vector<Box3D> gts1{box_at(0, 40), box_at(8, 2)};
  ProposalSet p0, p1;
  p0.items.push_back({gts0[0], 0.9});
  p1.items.push_back({gts1[1], 0.8});
  p1.items.push_back({box_at(-30, -30), 0.7});  // FP
  std::vector<EvalFrame> frames{{&p0, &gts0}, {&p1, &gts1}};
  const EvalReport rep = evaluate(frames);
  EXPECT_EQ(rep.frame_count, 2u);
  EXPECT_EQ(rep.gt_count, 3u);
  EXPECT_EQ(rep.prediction_count, 3u);
  EXPECT_NEAR(rep.precision_05, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(rep.recall_05, 2.0 / 3.0, 1e-12);
  EXPECT_GT(rep.ap_03, 0.0);
  EXPECT_LE(rep.ap_05, 1.0);
  ASSERT_EQ(rep.range_banded.size(), 3u);
}
