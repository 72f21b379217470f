#pragma once

// End-to-end orchestration of the refinement loop: weak-detector
// initialization from communicated-agent priors, T iterations of
// propose -> purify -> stabilize -> consensus -> fit, plus the ablation and
// robustness drivers. Ground truth is only touched in the evaluation helpers.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ums/ccl.hpp"
#include "ums/evalmetrics.hpp"
#include "ums/parallel.hpp"
#include "ums/ppf.hpp"
#include "ums/pps.hpp"
#include "ums/scenesim.hpp"
#include "ums/serialization.hpp"
#include "ums/weakdet.hpp"

namespace ums {

struct PipelineConfig {
  int iterations = 20;  // T
  int epochs = 10;      // E per iteration
  double min_confidence = 0.01;
  ScheduleParams schedule;  // beta defaults assume T = 20
  double eta = 0.3;
  double eta_ccl = 0.3;
  int rho = 5;
  double gamma = 1e-3;
  LossWeights loss;
  double c_low = 0.1;
  double c_high = 0.7;
  bool enable_ppf = true;
  bool enable_pps = true;
  bool enable_ccl = true;
  bool fixed_tau = false;       // override the schedule with a constant tau
  double fixed_tau_value = 0.0;
  SceneConfig scene;
  BevSpec bev;
  DetectorModel detector_init;
  int num_threads = 0;  // 0 = hardware concurrency

  void validate() const {
    if (iterations < 1 || epochs < 1) {
      throw std::invalid_argument("PipelineConfig: T and E must be >= 1");
    }
    schedule.validate();
  }
};

struct StageTimings {
  double propose_s = 0.0;
  double refine_s = 0.0;
  double fit_s = 0.0;
};

struct IterationReport {
  int iteration = 0;
  EvalReport multi_pseudo;
  EvalReport ego_pseudo;
  std::vector<double> multi_loss_trace;
  std::vector<double> ego_loss_trace;
  StageTimings timings;
};

struct RunResult {
  DetectorModel detector_multi;
  DetectorModel detector_ego;
  DetectorModel initial_multi;  // post-initialization, pre-refinement
  DetectorModel initial_ego;
  PpfClassifier classifier;
  MemoryBank bank;
  std::vector<IterationReport> reports;
  EvalReport final_multi_detection;
  EvalReport final_ego_detection;
};

namespace detail {

struct FrameData {
  const Frame* frame = nullptr;
  PointCloud fused;
  const PointCloud* ego = nullptr;
  std::vector<Box3D> priors;
};

inline std::vector<FrameData> prepare_frames(const std::vector<Frame>& frames,
                                             int num_threads) {
  std::vector<FrameData> out(frames.size());
  parallel_for(frames.size(), [&](size_t i) {
    out[i].frame = &frames[i];
    out[i].ego = &frames[i].agent_clouds[0];
    out[i].fused = fuse_to_ego(frames[i]);
    out[i].priors = comm_prior_boxes(frames[i]);
  }, num_threads);
  return out;
}

inline double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

/// nms(propose(...)) per frame: the detector-level output of one branch.
inline std::vector<ProposalSet> detect_all(const DetectorModel& model,
                                           const std::vector<FrameData>& data,
                                           bool multi_view, double eta,
                                           int num_threads) {
  std::vector<ProposalSet> out(data.size());
  parallel_for(data.size(), [&](size_t i) {
    const PointCloud& cloud = multi_view ? data[i].fused : *data[i].ego;
    out[i] = nms(propose(model, cloud, nullptr, data[i].frame->frame_id,
                         multi_view ? View::multi : View::ego),
                 eta);
  }, num_threads);
  return out;
}

inline EvalReport evaluate_sets(const std::vector<ProposalSet>& preds,
                                const std::vector<FrameData>& data) {
  std::vector<EvalFrame> ef;
  ef.reserve(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    ef.push_back({&preds[i], &data[i].frame->gt_boxes});
  }
  return evaluate(ef);
}

inline std::string csv_report_row(int iteration, const char* view,
                                  const EvalReport& r) {
  std::ostringstream os;
  os << iteration << ',' << view << ',' << fmt_double(r.ap_03) << ','
     << fmt_double(r.ap_05) << ',' << fmt_double(r.precision_05) << ','
     << fmt_double(r.recall_05);
  for (const BandAp& b : r.range_banded) os << ',' << fmt_double(b.ap);
  return os.str();
}

}  // namespace detail

/// Execute the full refinement loop. When out_dir is non-empty, per-iteration
/// pseudo labels and the memory bank are persisted before any detector fit
/// consumes them, and metrics land in metrics.csv / timings.csv.
inline RunResult run_training(const PipelineConfig& cfg,
                              const std::vector<Frame>& frames,
                              const std::filesystem::path& out_dir = {}) {
  cfg.validate();
  const bool persist = !out_dir.empty();
  if (persist) std::filesystem::create_directories(out_dir);

  auto data = detail::prepare_frames(frames, cfg.num_threads);
  const size_t n = data.size();

  RunResult result;
  DetectorModel base = cfg.detector_init;
  base.min_confidence = cfg.min_confidence;
  {
    std::vector<PretrainFrame> pt_multi(n), pt_ego(n);
    for (size_t i = 0; i < n; ++i) {
      pt_multi[i] = {&data[i].fused, data[i].priors};
      pt_ego[i] = {data[i].ego, data[i].priors};
    }
    result.initial_multi = pretrain_detector(base, pt_multi, cfg.loss);
    result.initial_ego = pretrain_detector(base, pt_ego, cfg.loss);
  }
  DetectorModel det_multi = result.initial_multi;
  DetectorModel det_ego = result.initial_ego;

  ScheduleParams schedule = cfg.schedule;
  if (cfg.fixed_tau) {
    // Constant threshold: collapse the sigmoid to its midpoint value.
    schedule.tau_min = std::max(0.0, cfg.fixed_tau_value - 1e-9);
    schedule.tau_max = std::min(1.0, cfg.fixed_tau_value + 1e-9);
    if (schedule.tau_max <= schedule.tau_min) schedule.tau_max = schedule.tau_min + 1e-9;
  }

  std::ofstream metrics_csv, timings_csv;
  if (persist) {
    metrics_csv.open(out_dir / "metrics.csv");
    metrics_csv << "iteration,view,ap_03,ap_05,precision_05,recall_05,"
                   "ap_05_short,ap_05_mid,ap_05_long\n";
    timings_csv.open(out_dir / "timings.csv");
    timings_csv << "iteration,propose_s,refine_s,fit_s\n";
  }

  struct BevCache {
    BevGrid ego{BevSpec{}};
    BevGrid multi{BevSpec{}};
    VisibilityMask mask;
  };

  for (int t = 1; t <= cfg.iterations; ++t) {
    IterationReport report;
    report.iteration = t;
    double t0 = detail::now_s();

    // Per-frame BEV grids for the consensus branch; rebuilt per iteration to
    // keep peak memory flat.
    std::vector<BevCache> bev;
    if (cfg.enable_ccl) {
      bev.resize(n);
      parallel_for(n, [&](size_t i) {
        bev[i].ego = bev_rasterize(*data[i].ego, cfg.bev);
        bev[i].multi = bev_rasterize(data[i].fused, cfg.bev);
        bev[i].mask = visibility_mask(bev[i].ego, cfg.gamma);
      }, cfg.num_threads);
    }
    auto aux_for = [&](size_t i) -> AuxFeatureFn {
      if (!cfg.enable_ccl) return nullptr;
      const double mu3 = cfg.loss.mu3;
      const BevCache* c = &bev[i];
      return [c, mu3](const Box3D& box) {
        return mu3 * proposal_bev_discrepancy(c->ego, c->multi, c->mask, box);
      };
    };

    std::vector<ProposalSet> p_multi(n), p_ego(n);
    parallel_for(n, [&](size_t i) {
      p_multi[i] = propose(det_multi, data[i].fused, nullptr,
                           data[i].frame->frame_id, View::multi);
      p_ego[i] = propose(det_ego, *data[i].ego, aux_for(i),
                         data[i].frame->frame_id, View::ego);
    }, cfg.num_threads);
    report.timings.propose_s = detail::now_s() - t0;
    t0 = detail::now_s();

    // PPF is trained once, at the first iteration, from the multi-view
    // confidence extremes.
    if (cfg.enable_ppf && t == 1) {
      SelfSupSets pooled;
      for (size_t i = 0; i < n; ++i) {
        for (const Proposal& p : p_multi[i].items) {
          if (p.confidence <= cfg.c_low) {
            pooled.negatives.emplace_back(p, crop(data[i].fused, p.box));
          } else if (p.confidence >= cfg.c_high) {
            pooled.positives.emplace_back(p, crop(data[i].fused, p.box));
          }
        }
      }
      if (pooled.negatives.empty() || pooled.positives.empty()) {
        throw std::runtime_error(
            "run_training: purifying filter has no self-supervision at t=1 "
            "(negatives=" + std::to_string(pooled.negatives.size()) +
            ", positives=" + std::to_string(pooled.positives.size()) +
            "); widen [c_low, c_high] or rerun detector initialization");
      }
      result.classifier = train_ppf(pooled);
      if (persist) save_classifier(result.classifier, out_dir / "ppf.txt");
    }

    std::vector<ProposalSet> f_multi(n), f_ego(n);
    parallel_for(n, [&](size_t i) {
      if (cfg.enable_ppf) {
        f_multi[i] = ppf_filter(result.classifier, p_multi[i], data[i].fused);
        f_ego[i] = ppf_filter(result.classifier, p_ego[i], *data[i].ego);
      } else {
        f_multi[i] = p_multi[i];
        f_ego[i] = p_ego[i];
      }
    }, cfg.num_threads);

    // Stabilized multi-view pseudo labels (bank is partitioned by frame, so
    // the per-frame updates are independent).
    std::vector<ProposalSet> hat_multi(n);
    if (cfg.enable_pps) {
      parallel_for(n, [&](size_t i) {
        hat_multi[i] = stabilize(f_multi[i], result.bank, t, schedule, cfg.eta);
      }, 1);  // bank mutation: keep single-writer
    } else {
      parallel_for(n, [&](size_t i) { hat_multi[i] = nms(f_multi[i], cfg.eta); },
                   cfg.num_threads);
    }

    std::vector<ProposalSet> hat_ego(n);
    parallel_for(n, [&](size_t i) {
      if (cfg.enable_ccl) {
        const ProposalSet u = unmatched_valid_set(f_ego[i], f_multi[i],
                                                  *data[i].ego, cfg.eta_ccl, cfg.rho);
        hat_ego[i] = consensus_labels(f_ego[i], u, cfg.eta_ccl);
      } else {
        hat_ego[i] = nms(f_ego[i], cfg.eta);
      }
    }, cfg.num_threads);

    std::vector<double> bev_losses(n, 0.0);
    if (cfg.enable_ccl) {
      parallel_for(n, [&](size_t i) {
        bev_losses[i] = bev_alignment_loss(bev[i].ego, bev[i].multi, bev[i].mask).loss;
      }, cfg.num_threads);
    }
    report.timings.refine_s = detail::now_s() - t0;

    // Persist pseudo labels and bank before fitting consumes them.
    if (persist) {
      const auto iter_dir = out_dir / ("iter_" + std::to_string(t));
      std::filesystem::create_directories(iter_dir);
      std::ofstream pm(iter_dir / "pseudo_multi.txt"), pe(iter_dir / "pseudo_ego.txt");
      for (size_t i = 0; i < n; ++i) {
        pm << serialize_proposals(hat_multi[i]);
        pe << serialize_proposals(hat_ego[i]);
      }
      save_bank(result.bank, iter_dir / "bank.txt");
    }

    report.multi_pseudo = detail::evaluate_sets(hat_multi, data);
    report.ego_pseudo = detail::evaluate_sets(hat_ego, data);

    t0 = detail::now_s();
    // Half-batch fitting on alternating episode subsets: the detectors see a
    // different half of the episodes every iteration, which is what gives the
    // label trajectory its fluctuations (and the stabilization stage
    // something real to damp). Episode granularity matters: frames within an
    // episode are nearly identical, so a frame-interleaved split would make
    // both halves the same and suppress the fluctuation.
    const size_t ep_len = static_cast<size_t>(cfg.scene.episode_length);
    const size_t num_eps = (n + ep_len - 1) / ep_len;
    std::vector<FitFrame> fit_multi, fit_ego;
    for (size_t i = 0; i < n; ++i) {
      if (num_eps > 1 && (i / ep_len + static_cast<size_t>(t)) % 2 != 0) continue;
      fit_multi.push_back({data[i].frame->frame_id, &data[i].fused, &hat_multi[i],
                           nullptr, 0.0});
      fit_ego.push_back({data[i].frame->frame_id, data[i].ego, &hat_ego[i],
                         aux_for(i), bev_losses[i]});
    }
    // Step 0.5 (vs the fit default 0.1) lets the short per-iteration fit
    // actually track the alternating half-batches instead of averaging them
    // away; the fit's internal step-halving keeps each epoch non-increasing.
    FitResult fm = fit_detector(det_multi, fit_multi, cfg.loss, cfg.epochs, 0.5);
    FitResult fe = fit_detector(det_ego, fit_ego, cfg.loss, cfg.epochs, 0.5);
    det_multi = fm.model;
    det_ego = fe.model;
    report.multi_loss_trace = std::move(fm.loss_trace);
    report.ego_loss_trace = std::move(fe.loss_trace);
    report.timings.fit_s = detail::now_s() - t0;

    if (persist) {
      metrics_csv << detail::csv_report_row(t, "multi", report.multi_pseudo) << '\n';
      metrics_csv << detail::csv_report_row(t, "ego", report.ego_pseudo) << '\n';
      timings_csv << t << ',' << fmt_double(report.timings.propose_s) << ','
                  << fmt_double(report.timings.refine_s) << ','
                  << fmt_double(report.timings.fit_s) << '\n';
    }
    result.reports.push_back(std::move(report));
  }

  result.detector_multi = det_multi;
  result.detector_ego = det_ego;
  result.final_multi_detection = detail::evaluate_sets(
      detail::detect_all(det_multi, data, true, cfg.eta, cfg.num_threads), data);
  result.final_ego_detection = detail::evaluate_sets(
      detail::detect_all(det_ego, data, false, cfg.eta, cfg.num_threads), data);
  if (persist) {
    metrics_csv << detail::csv_report_row(cfg.iterations + 1, "multi_detector",
                                          result.final_multi_detection)
                << '\n';
    metrics_csv << detail::csv_report_row(cfg.iterations + 1, "ego_detector",
                                          result.final_ego_detection)
                << '\n';
    save_detector(det_multi, out_dir / "detector_multi.txt");
    save_detector(det_ego, out_dir / "detector_ego.txt");
  }
  return result;
}

// ---- ablation --------------------------------------------------------------

struct AblationRow {
  std::string toggles;  // e.g. "ppf+pps"
  EvalReport multi_pseudo;   // final-iteration pseudo labels
  EvalReport ego_pseudo;
  EvalReport multi_detection;  // trained detector output
  EvalReport ego_detection;
};

/// Runs {none}, {PPF}, {PPF+PPS}, {PPF+PPS+CCL} on the same frames.
inline std::vector<AblationRow> run_ablation(const PipelineConfig& cfg,
                                             const std::vector<Frame>& frames,
                                             const std::filesystem::path& out_dir = {}) {
  struct ToggleSet {
    const char* name;
    bool ppf, pps, ccl;
  };
  const ToggleSet sets[4] = {{"none", false, false, false},
                             {"ppf", true, false, false},
                             {"ppf+pps", true, true, false},
                             {"ppf+pps+ccl", true, true, true}};
  std::vector<AblationRow> rows;
  for (const ToggleSet& ts : sets) {
    PipelineConfig c = cfg;
    c.enable_ppf = ts.ppf;
    c.enable_pps = ts.pps;
    c.enable_ccl = ts.ccl;
    const std::filesystem::path dir =
        out_dir.empty() ? std::filesystem::path{} : out_dir / ts.name;
    RunResult r = run_training(c, frames, dir);
    AblationRow row;
    row.toggles = ts.name;
    row.multi_pseudo = r.reports.back().multi_pseudo;
    row.ego_pseudo = r.reports.back().ego_pseudo;
    row.multi_detection = r.final_multi_detection;
    row.ego_detection = r.final_ego_detection;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- robustness ------------------------------------------------------------

struct RobustnessRow {
  std::string scenario;  // clean | pose_noise | latency
  EvalReport refined_multi;   // trained multi detector
  EvalReport baseline_multi;  // initialization-only detector
};

/// Evaluate the trained and the initialization-only multi detector on clean,
/// pose-noise and latency variants of the scene.
inline std::vector<RobustnessRow> run_robustness(const PipelineConfig& cfg,
                                                 const std::vector<Frame>& frames,
                                                 const RunResult& trained,
                                                 double sigma_m, int delay_frames,
                                                 uint64_t noise_seed = 99) {
  std::vector<RobustnessRow> rows;
  auto eval_variant = [&](const std::string& name, const std::vector<Frame>& variant) {
    auto data = detail::prepare_frames(variant, cfg.num_threads);
    RobustnessRow row;
    row.scenario = name;
    row.refined_multi = detail::evaluate_sets(
        detail::detect_all(trained.detector_multi, data, true, cfg.eta, cfg.num_threads),
        data);
    row.baseline_multi = detail::evaluate_sets(
        detail::detect_all(trained.initial_multi, data, true, cfg.eta, cfg.num_threads),
        data);
    rows.push_back(std::move(row));
  };
  eval_variant("clean", frames);
  // sigma 0 must reproduce the clean row exactly, so yaw noise is tied to it.
  eval_variant("pose_noise",
               perturb_poses(frames, sigma_m, noise_seed, sigma_m > 0.0));
  eval_variant("latency", apply_latency(frames, delay_frames));
  return rows;
}

}  // namespace ums
