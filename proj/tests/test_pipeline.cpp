#include "ums/pipeline.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace ums;

namespace {

namespace fs = std::filesystem;

PipelineConfig fast_config(uint64_t seed = 3) {
  PipelineConfig cfg;
  cfg.iterations = 2;
  cfg.epochs = 3;
  cfg.scene.num_frames = 12;
  cfg.scene.episode_length = 4;
  cfg.scene.vehicles_per_frame = {4, 7};
  cfg.scene.points_per_m2_at_10m = 25.0;
  cfg.scene.ground_points_per_agent = 400;
  cfg.scene.rng_seed = seed;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(RunTraining, PassThroughBaselineEqualsRawNms) {
  PipelineConfig cfg = fast_config();
  cfg.iterations = 1;
  cfg.enable_ppf = cfg.enable_pps = cfg.enable_ccl = false;
  const auto frames = generate_scene(cfg.scene);
  const fs::path out = fresh_dir("ums_passthrough");
  const RunResult res = run_training(cfg, frames, out);

  // With every module disabled the persisted pseudo labels are exactly the
  // initialization detector's NMS output.
  std::string expected;
  for (const Frame& f : frames) {
    const PointCloud fused = fuse_to_ego(f);
    ProposalSet raw = propose(res.initial_multi, fused, nullptr, f.frame_id,
                              View::multi);
    expected += serialize_proposals(nms(raw, cfg.eta));
  }
  EXPECT_EQ(slurp(out / "iter_1" / "pseudo_multi.txt"), expected);
  fs::remove_all(out);
}

TEST(RunTraining, DeterministicReportsAndByteIdenticalMetrics) {
  const PipelineConfig cfg = fast_config();
  const auto frames = generate_scene(cfg.scene);
  const fs::path out_a = fresh_dir("ums_det_a");
  const fs::path out_b = fresh_dir("ums_det_b");
  const RunResult a = run_training(cfg, frames, out_a);
  const RunResult b = run_training(cfg, frames, out_b);
  ASSERT_EQ(a.reports.size(), b.reports.size());
  for (size_t t = 0; t < a.reports.size(); ++t) {
    EXPECT_DOUBLE_EQ(a.reports[t].multi_pseudo.ap_05, b.reports[t].multi_pseudo.ap_05);
    EXPECT_DOUBLE_EQ(a.reports[t].ego_pseudo.ap_03, b.reports[t].ego_pseudo.ap_03);
    EXPECT_EQ(a.reports[t].multi_loss_trace, b.reports[t].multi_loss_trace);
  }
  EXPECT_EQ(slurp(out_a / "metrics.csv"), slurp(out_b / "metrics.csv"));
  EXPECT_FALSE(slurp(out_a / "metrics.csv").empty());
  fs::remove_all(out_a);
  fs::remove_all(out_b);
}

TEST(RunTraining, PersistsArtifactsBeforeFitting) {
  const PipelineConfig cfg = fast_config();
  const auto frames = generate_scene(cfg.scene);
  const fs::path out = fresh_dir("ums_artifacts");
  run_training(cfg, frames, out);
  for (int t = 1; t <= cfg.iterations; ++t) {
    const fs::path iter = out / ("iter_" + std::to_string(t));
    EXPECT_TRUE(fs::exists(iter / "pseudo_multi.txt"));
    EXPECT_TRUE(fs::exists(iter / "pseudo_ego.txt"));
    EXPECT_TRUE(fs::exists(iter / "bank.txt"));
  }
  EXPECT_TRUE(fs::exists(out / "ppf.txt"));
  EXPECT_TRUE(fs::exists(out / "detector_multi.txt"));
  EXPECT_TRUE(fs::exists(out / "metrics.csv"));
  EXPECT_TRUE(fs::exists(out / "timings.csv"));
  const std::string metrics = slurp(out / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, 9), "iteration");
  fs::remove_all(out);
}

TEST(RunTraining, LossTracesNonIncreasing) {
  const PipelineConfig cfg = fast_config();
  const auto frames = generate_scene(cfg.scene);
  const RunResult res = run_training(cfg, frames);
  for (const IterationReport& rep : res.reports) {
    ASSERT_EQ(rep.multi_loss_trace.size(), static_cast<size_t>(cfg.epochs));
    for (size_t e = 1; e < rep.multi_loss_trace.size(); ++e) {
      EXPECT_LE(rep.multi_loss_trace[e], rep.multi_loss_trace[e - 1] + 1e-12);
      EXPECT_LE(rep.ego_loss_trace[e], rep.ego_loss_trace[e - 1] + 1e-12);
    }
  }
}

TEST(RunTraining, InvalidConfigRejected) {
  PipelineConfig cfg = fast_config();
  cfg.iterations = 0;
  EXPECT_THROW(run_training(cfg, {}), std::invalid_argument);
  cfg = fast_config();
  cfg.schedule.tau_min = 0.5;
  cfg.schedule.tau_max = 0.2;
  EXPECT_THROW(run_training(cfg, {}), std::invalid_argument);
}

TEST(RunAblation, RowPerToggleSetAndPassThroughAgreement) {
  PipelineConfig cfg = fast_config();
  cfg.iterations = 1;
  const auto frames = generate_scene(cfg.scene);
  const auto rows = run_ablation(cfg, frames);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].toggles, "none");
  EXPECT_EQ(rows[1].toggles, "ppf");
  EXPECT_EQ(rows[2].toggles, "ppf+pps");
  EXPECT_EQ(rows[3].toggles, "ppf+pps+ccl");

  PipelineConfig off = cfg;
  off.enable_ppf = off.enable_pps = off.enable_ccl = false;
  const RunResult baseline = run_training(off, frames);
  EXPECT_DOUBLE_EQ(rows[0].multi_pseudo.ap_05,
                   baseline.reports.back().multi_pseudo.ap_05);
  EXPECT_DOUBLE_EQ(rows[0].ego_pseudo.ap_03,
                   baseline.reports.back().ego_pseudo.ap_03);
}

TEST(RunRobustness, ZeroPerturbationMatchesCleanAndSchemaComplete) {
  PipelineConfig cfg = fast_config();
  cfg.iterations = 1;
  const auto frames = generate_scene(cfg.scene);
  const RunResult trained = run_training(cfg, frames);
  const auto rows = run_robustness(cfg, frames, trained, 0.0, 0);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].scenario, "clean");
  EXPECT_EQ(rows[1].scenario, "pose_noise");
  EXPECT_EQ(rows[2].scenario, "latency");
  for (size_t i = 1; i < rows.size(); ++i) {
    EXPECT_DOUBLE_EQ(rows[i].refined_multi.ap_05, rows[0].refined_multi.ap_05);
    EXPECT_DOUBLE_EQ(rows[i].baseline_multi.ap_05, rows[0].baseline_multi.ap_05);
  }
}

TEST(Serialization, ProposalRecordsRoundTrip) {
  ProposalSet set;
  set.frame_id = "f000003";
  set.view = View::ego;
  Box3D b;
  b.cx = 1.25;
  b.cy = -2.5;
  b.cz = 0.875;
  b.l = 4.0 / 3.0;
  b.w = 1.9;
  b.h = 1.6;
  b.yaw = -1.0471975511965976;
  set.items.push_back({b, 0.12345678901234567});
  std::istringstream in(serialize_proposals(set));
  const auto sets = parse_proposals(in);
  ASSERT_EQ(sets.size(), 1u);
  EXPECT_EQ(sets[0].frame_id, set.frame_id);
  EXPECT_EQ(sets[0].view, View::ego);
  ASSERT_EQ(sets[0].items.size(), 1u);
  EXPECT_DOUBLE_EQ(sets[0].items[0].box.l, b.l);
  EXPECT_DOUBLE_EQ(sets[0].items[0].box.yaw, b.yaw);
  EXPECT_DOUBLE_EQ(sets[0].items[0].confidence, 0.12345678901234567);

  std::istringstream bad("f0,multi,1,2,3\n");
  EXPECT_THROW(parse_proposals(bad), std::runtime_error);
}

TEST(Serialization, BankDetectorClassifierRoundTrip) {
  const fs::path dir = fresh_dir("ums_ckpt_rt");
  fs::create_directories(dir);

  MemoryBank bank;
  Box3D b;
  b.cx = 3.5;
  b.l = 4.2;
  b.w = 1.8;
  b.h = 1.5;
  bank.entries["f000001"] = {{b, 0.7}};
  bank.entries["f000002"] = {};
  save_bank(bank, dir / "bank.txt");
  const MemoryBank loaded = load_bank(dir / "bank.txt");
  ASSERT_EQ(loaded.entries.size(), 2u);
  ASSERT_EQ(loaded.entries.at("f000001").size(), 1u);
  EXPECT_DOUBLE_EQ(loaded.entries.at("f000001")[0].confidence, 0.7);
  EXPECT_TRUE(loaded.entries.at("f000002").empty());

  DetectorModel m;
  m.scorer_bias = -0.75;
  m.scorer_weights[3] = 1.0 / 3.0;
  m.box_offset[2] = {1.1, -0.05};
  m.min_confidence = 0.02;
  save_detector(m, dir / "det.txt");
  const DetectorModel lm = load_detector(dir / "det.txt");
  EXPECT_EQ(lm.scorer_weights, m.scorer_weights);
  EXPECT_DOUBLE_EQ(lm.scorer_bias, m.scorer_bias);
  EXPECT_DOUBLE_EQ(lm.box_offset[2][1], -0.05);
  EXPECT_DOUBLE_EQ(lm.min_confidence, 0.02);

  PpfClassifier clf;
  clf.weights.assign(kInstanceFeatureDim, 0.25);
  clf.weights[0] = -1.0 / 7.0;
  clf.bias = 0.5;
  clf.feat_mean.assign(kInstanceFeatureDim, 0.1);
  clf.feat_std.assign(kInstanceFeatureDim, 2.0);
  clf.trained = true;
  save_classifier(clf, dir / "clf.txt");
  const PpfClassifier lc = load_classifier(dir / "clf.txt");
  EXPECT_EQ(lc.weights, clf.weights);
  EXPECT_DOUBLE_EQ(lc.bias, clf.bias);
  EXPECT_TRUE(lc.trained);

  EXPECT_THROW(load_detector(dir / "missing.txt"), std::runtime_error);
  fs::remove_all(dir);
}

TEST(TrainingPath, CoreModulesNeverTouchGroundTruth) {
  // The refinement math lives in these headers; none of them may read the
  // simulator-private ground-truth channel.
  const fs::path inc = UMS_INCLUDE_DIR;
  for (const char* name : {"geometry.hpp", "features.hpp", "rng.hpp", "ppf.hpp",
                           "pps.hpp", "ccl.hpp", "weakdet.hpp", "parallel.hpp"}) {
    const std::string text = slurp(inc / name);
    ASSERT_FALSE(text.empty()) << name;
    EXPECT_EQ(text.find("gt_boxes"), std::string::npos) << name;
    EXPECT_EQ(text.find("evalmetrics"), std::string::npos) << name;
  }
}
