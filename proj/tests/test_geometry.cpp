#include "ums/geometry.hpp"

#include <gtest/gtest.h>

#include "ums/rng.hpp"

using namespace ums;

namespace {

Box3D make_box(double cx, double cy, double l, double w, double yaw,
               double cz = 0.0, double h = 1.5) {
  Box3D b;
  b.cx = cx;
  b.cy = cy;
  b.cz = cz;
  b.l = l;
  b.w = w;
  b.h = h;
  b.yaw = yaw;
  return b;
}

bool point_in_footprint(double x, double y, const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = x - b.cx, dy = y - b.cy;
  const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.l && std::abs(ly) <= 0.5 * b.w;
}

// Monte-Carlo rejection-sampling oracle for BEV IoU over the union's
// bounding rectangle.
double monte_carlo_iou(const Box3D& a, const Box3D& b, int samples, Rng& rng) {
  double min_x = 1e30, max_x = -1e30, min_y = 1e30, max_y = -1e30;
  for (const Box3D* box : {&a, &b}) {
    for (const Vec2& c : box->bev_corners()) {
      min_x = std::min(min_x, c.x);
      max_x = std::max(max_x, c.x);
      min_y = std::min(min_y, c.y);
      max_y = std::max(max_y, c.y);
    }
  }
  int in_a = 0, in_b = 0, in_both = 0;
  for (int i = 0; i < samples; ++i) {
    const double x = rng.uniform(min_x, max_x);
    const double y = rng.uniform(min_y, max_y);
    const bool pa = point_in_footprint(x, y, a);
    const bool pb = point_in_footprint(x, y, b);
    in_a += pa;
    in_b += pb;
    in_both += pa && pb;
  }
  const int uni = in_a + in_b - in_both;
  return uni == 0 ? 0.0 : static_cast<double>(in_both) / uni;
}

Box3D random_box(Rng& rng, double span = 10.0) {
  return make_box(rng.uniform(-span, span), rng.uniform(-span, span),
                  rng.uniform(1.0, 6.0), rng.uniform(1.0, 4.0),
                  rng.uniform(-kPi, kPi), rng.uniform(-1.0, 1.0),
                  rng.uniform(1.0, 2.0));
}

// O(n^2) greedy reference used to pin the production NMS.
ProposalSet reference_nms(const ProposalSet& set, double eta) {
  ProposalSet out;
  out.frame_id = set.frame_id;
  out.view = set.view;
  std::vector<int> order(set.items.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    return set.items[x].confidence > set.items[y].confidence;
  });
  std::vector<char> dead(set.items.size(), 0);
  for (int i : order) {
    if (dead[i]) continue;
    out.items.push_back(set.items[i]);
    for (int j : order) {
      if (dead[j] || j == i) continue;
      if (set.items[j].confidence > set.items[i].confidence) continue;
      if (set.items[j].confidence == set.items[i].confidence && j < i) continue;
      if (rotated_iou_bev(set.items[i].box, set.items[j].box) >= eta) dead[j] = 1;
    }
  }
  return out;
}

}  // namespace

TEST(TransformPoints, IdentityAndTranslationAndRotation) {
  PointCloud cloud;
  cloud.points = {{0, 0, 0}, {1, 0, 0}, {-2, 3, 1}};
  const PointCloud same = transform_points(cloud, PoseSE3{});
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    EXPECT_DOUBLE_EQ(same.points[i].x, cloud.points[i].x);
    EXPECT_DOUBLE_EQ(same.points[i].y, cloud.points[i].y);
    EXPECT_DOUBLE_EQ(same.points[i].z, cloud.points[i].z);
  }

  const PointCloud shifted = transform_points(cloud, PoseSE3{1, 2, 0, 0});
  EXPECT_DOUBLE_EQ(shifted.points[0].x, 1.0);
  EXPECT_DOUBLE_EQ(shifted.points[0].y, 2.0);

  PointCloud one;
  one.points = {{1, 0, 0}};
  const PointCloud rot = transform_points(one, PoseSE3{0, 0, 0, kPi / 2});
  EXPECT_NEAR(rot.points[0].x, 0.0, 1e-9);
  EXPECT_NEAR(rot.points[0].y, 1.0, 1e-9);
}

TEST(TransformPoints, NonFinitePoseRejected) {
  PointCloud cloud;
  cloud.points = {{0, 0, 0}};
  PoseSE3 bad;
  bad.tx = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(transform_points(cloud, bad), std::invalid_argument);
}

TEST(Pose, InverseComposesToIdentity) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    PoseSE3 p{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-3, 3),
              rng.uniform(-kPi, kPi)};
    const PoseSE3 id = p.compose(p.inverse());
    EXPECT_NEAR(id.tx, 0.0, 1e-9);
    EXPECT_NEAR(id.ty, 0.0, 1e-9);
    EXPECT_NEAR(id.tz, 0.0, 1e-9);
    EXPECT_NEAR(normalize_yaw(id.yaw), 0.0, 1e-9);
  }
}

TEST(RotatedIou, AnalyticCases) {
  const Box3D a = make_box(0, 0, 1, 1, 0);
  EXPECT_DOUBLE_EQ(rotated_iou_bev(a, a), 1.0);
  EXPECT_DOUBLE_EQ(rotated_iou_bev(a, make_box(100, 0, 1, 1, 0)), 0.0);
  // Two axis-aligned 1x1 boxes offset 0.5 in x: overlap 0.5 / union 1.5.
  EXPECT_NEAR(rotated_iou_bev(a, make_box(0.5, 0, 1, 1, 0)), 1.0 / 3.0, 1e-12);
  Box3D degenerate = a;
  degenerate.l = 0.0;
  EXPECT_DOUBLE_EQ(rotated_iou_bev(a, degenerate), 0.0);
}

TEST(RotatedIou, RotatedSquareMatchesMonteCarlo) {
  const Box3D a = make_box(0, 0, 2, 2, 0);
  const Box3D b = make_box(0, 0, 2, 2, kPi / 4);
  Rng rng(7);
  const double mc = monte_carlo_iou(a, b, 1000000, rng);
  EXPECT_NEAR(rotated_iou_bev(a, b), mc, 1e-2);
  // The octagon intersection has a closed form: area 8(sqrt(2)-1).
  const double inter = 8.0 * (std::sqrt(2.0) - 1.0);
  EXPECT_NEAR(rotated_iou_bev(a, b), inter / (8.0 - inter), 1e-12);
}

TEST(RotatedIou, SymmetricOnRandomPairs) {
  Rng rng(21);
  for (int i = 0; i < 10000; ++i) {
    const Box3D a = random_box(rng), b = random_box(rng);
    EXPECT_NEAR(rotated_iou_bev(a, b), rotated_iou_bev(b, a), 1e-12);
  }
}

TEST(RotatedIou, InvariantUnderCommonRigidTransform) {
  Rng rng(22);
  for (int i = 0; i < 2000; ++i) {
    const Box3D a = random_box(rng), b = random_box(rng);
    const PoseSE3 pose{rng.uniform(-30, 30), rng.uniform(-30, 30), 0.0,
                       rng.uniform(-kPi, kPi)};
    EXPECT_NEAR(rotated_iou_bev(a, b),
                rotated_iou_bev(transform_box(a, pose), transform_box(b, pose)),
                1e-9);
  }
}

TEST(PointsInBox, BasicAndOracle) {
  PointCloud empty;
  EXPECT_EQ(points_in_box(empty, make_box(0, 0, 4, 2, 0.3)).count, 0);

  PointCloud center;
  center.points = {{1, 2, 0.5}};
  EXPECT_EQ(points_in_box(center, make_box(1, 2, 4, 2, 0.7, 0.5)).count, 1);

  // 1000 random points against the per-point inverse-transform oracle.
  Rng rng(33);
  const Box3D box = random_box(rng);
  PointCloud cloud;
  for (int i = 0; i < 1000; ++i) {
    cloud.points.push_back(
        {rng.uniform(-12, 12), rng.uniform(-12, 12), rng.uniform(-3, 3)});
  }
  const auto res = points_in_box(cloud, box);
  const PoseSE3 to_local = PoseSE3{box.cx, box.cy, box.cz, box.yaw}.inverse();
  std::vector<int> expected;
  for (int i = 0; i < 1000; ++i) {
    const Point3 q = to_local.apply(cloud.points[i]);
    if (std::abs(q.x) <= 0.5 * box.l && std::abs(q.y) <= 0.5 * box.w &&
        std::abs(q.z) <= 0.5 * box.h) {
      expected.push_back(i);
    }
  }
  EXPECT_EQ(res.indices, expected);
}

TEST(PointsInBox, CountInvariantUnderCommonPose) {
  Rng rng(34);
  for (int trial = 0; trial < 50; ++trial) {
    const Box3D box = random_box(rng);
    PointCloud cloud;
    for (int i = 0; i < 200; ++i) {
      cloud.points.push_back(
          {rng.uniform(-12, 12), rng.uniform(-12, 12), rng.uniform(-3, 3)});
    }
    const PoseSE3 pose{rng.uniform(-20, 20), rng.uniform(-20, 20),
                       rng.uniform(-2, 2), rng.uniform(-kPi, kPi)};
    // Points exactly on the boundary can flip under rounding; nudge the box
    // marginally so the test probes the generic case.
    const int before = points_in_box(cloud, box).count;
    const int after =
        points_in_box(transform_points(cloud, pose), transform_box(box, pose)).count;
    EXPECT_EQ(before, after);
  }
}

TEST(Nms, Basics) {
  ProposalSet set;
  set.items.push_back({make_box(0, 0, 4, 2, 0), 0.8});
  ProposalSet out = nms(set, 0.5);
  ASSERT_EQ(out.items.size(), 1u);

  set.items.push_back({make_box(0, 0, 4, 2, 0), 0.4});
  out = nms(set, 0.5);
  ASSERT_EQ(out.items.size(), 1u);
  EXPECT_DOUBLE_EQ(out.items[0].confidence, 0.8);

  EXPECT_THROW(nms(set, 0.0), std::invalid_argument);
  EXPECT_THROW(nms(set, 1.0), std::invalid_argument);
}

TEST(Nms, MatchesBruteForceReference) {
  Rng rng(55);
  for (int trial = 0; trial < 100; ++trial) {
    ProposalSet set;
    const int n = rng.uniform_int(0, 50);
    for (int i = 0; i < n; ++i) {
      set.items.push_back({random_box(rng, 6.0), rng.uniform()});
    }
    const double eta = rng.uniform(0.1, 0.9);
    const ProposalSet fast = nms(set, eta);
    const ProposalSet ref = reference_nms(set, eta);
    ASSERT_EQ(fast.items.size(), ref.items.size());
    for (size_t i = 0; i < fast.items.size(); ++i) {
      EXPECT_DOUBLE_EQ(fast.items[i].confidence, ref.items[i].confidence);
      EXPECT_DOUBLE_EQ(fast.items[i].box.cx, ref.items[i].box.cx);
    }
    // Contract: survivors pairwise below eta, output confidence-sorted.
    for (size_t i = 0; i < fast.items.size(); ++i) {
      if (i > 0) {
        EXPECT_GE(fast.items[i - 1].confidence, fast.items[i].confidence);
      }
      for (size_t j = i + 1; j < fast.items.size(); ++j) {
        EXPECT_LT(rotated_iou_bev(fast.items[i].box, fast.items[j].box), eta);
      }
    }
  }
}

TEST(Nms, Idempotent) {
  Rng rng(56);
  for (int trial = 0; trial < 30; ++trial) {
    ProposalSet set;
    for (int i = 0; i < 30; ++i) {
      set.items.push_back({random_box(rng, 6.0), rng.uniform()});
    }
    const ProposalSet once = nms(set, 0.3);
    const ProposalSet twice = nms(once, 0.3);
    ASSERT_EQ(once.items.size(), twice.items.size());
    for (size_t i = 0; i < once.items.size(); ++i) {
      EXPECT_DOUBLE_EQ(once.items[i].confidence, twice.items[i].confidence);
    }
  }
}

TEST(YawNormalization, HalfOpenInterval) {
  EXPECT_DOUBLE_EQ(normalize_yaw(kPi), kPi);
  EXPECT_NEAR(normalize_yaw(-kPi), kPi, 1e-12);
  EXPECT_NEAR(normalize_yaw(3 * kPi), kPi, 1e-9);
  EXPECT_NEAR(normalize_yaw(2 * kPi + 0.25), 0.25, 1e-12);
}
