// Command-line front end for the unsupervised multi-agent detection pipeline.
//
// Subcommands:
//   gen-scenes  generate a synthetic scene directory
//   run         full refinement training on a scene (generated or loaded)
//   ablate      module-toggle comparison on shared scenes
//   robustness  clean / pose-noise / latency evaluation of a trained run
//   eval        score a proposal file against a scene's ground truth
//
// Every flag can also come from a config file (--config, INI-style key=value),
// and UMS_OUT_DIR overrides any --out value.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "ums/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ums;

namespace {

struct CliOptions {
  PipelineConfig cfg;
  std::string scene_dir;   // load scenes from here when non-empty
  std::string out_dir;
  double sigma_m = 0.2;
  int delay_frames = 1;
  std::string pred_file;   // eval subcommand
};

void add_scene_flags(CLI::App* app, SceneConfig& s) {
  app->add_option("--frames", s.num_frames, "Number of frames to simulate");
  app->add_option("--agents", s.num_agents, "Number of agents (index 0 = ego)");
  app->add_option("--seed", s.rng_seed, "Scene RNG seed");
  app->add_option("--vehicles-min", s.vehicles_per_frame.lo, "Min vehicles per frame");
  app->add_option("--vehicles-max", s.vehicles_per_frame.hi, "Max vehicles per frame");
  app->add_option("--map-extent", s.map_extent, "Half-width of the map in meters");
  app->add_option("--point-density", s.points_per_m2_at_10m,
                  "Surface point density at 10 m range (points/m^2)");
  app->add_option("--episode-length", s.episode_length, "Frames per vehicle layout");
}

void add_pipeline_flags(CLI::App* app, CliOptions& o) {
  app->add_option("--iterations,-T", o.cfg.iterations, "Refinement iterations");
  app->add_option("--epochs,-E", o.cfg.epochs, "Detector epochs per iteration");
  app->add_option("--min-confidence", o.cfg.min_confidence,
                  "Minimum emitted proposal confidence");
  app->add_option("--eta", o.cfg.eta, "NMS IoU threshold");
  app->add_option("--eta-ccl", o.cfg.eta_ccl, "Consensus matching IoU threshold");
  app->add_option("--rho", o.cfg.rho, "Min ego point support for consensus boxes");
  app->add_option("--gamma", o.cfg.gamma, "Visibility-mask activation threshold");
  app->add_option("--c-low", o.cfg.c_low, "Purifier negative confidence bound");
  app->add_option("--c-high", o.cfg.c_high, "Purifier positive confidence bound");
  app->add_option("--tau-min", o.cfg.schedule.tau_min, "Curriculum threshold floor");
  app->add_option("--tau-max", o.cfg.schedule.tau_max, "Curriculum threshold ceiling");
  app->add_option("--mu1", o.cfg.loss.mu1, "Classification loss weight");
  app->add_option("--mu2", o.cfg.loss.mu2, "Regression loss weight");
  app->add_option("--mu3", o.cfg.loss.mu3, "Alignment loss weight");
  app->add_flag("--no-ppf", [&o](int64_t) { o.cfg.enable_ppf = false; },
                "Disable the proposal purifying filter");
  app->add_flag("--no-pps", [&o](int64_t) { o.cfg.enable_pps = false; },
                "Disable progressive proposal stabilizing");
  app->add_flag("--no-ccl", [&o](int64_t) { o.cfg.enable_ccl = false; },
                "Disable cross-view consensus learning");
  app->add_option("--fixed-tau", [&o](const CLI::results_t& r) {
                    o.cfg.fixed_tau = true;
                    o.cfg.fixed_tau_value = std::stod(r[0]);
                    return true;
                  },
                  "Replace the threshold schedule with a constant value");
  app->add_option("--threads", o.cfg.num_threads, "Worker threads (0 = auto)");
  app->add_option("--scene-dir", o.scene_dir,
                  "Load scenes from this directory instead of generating");
  add_scene_flags(app, o.cfg.scene);
}

std::string resolved_out(const std::string& flag_value) {
  if (const char* env = std::getenv("UMS_OUT_DIR"); env && *env) return env;
  return flag_value;
}

std::vector<Frame> obtain_frames(const CliOptions& o) {
  if (!o.scene_dir.empty()) {
    std::cerr << "[scene] loading " << o.scene_dir << "\n";
    return load_scene(o.scene_dir);
  }
  std::cerr << "[scene] generating " << o.cfg.scene.num_frames << " frames (seed "
            << o.cfg.scene.rng_seed << ")\n";
  return generate_scene(o.cfg.scene);
}

void print_report(std::ostream& os, const std::string& label, const EvalReport& r) {
  os << label << ": AP@0.3=" << r.ap_03 << " AP@0.5=" << r.ap_05
     << " P@0.5=" << r.precision_05 << " R@0.5=" << r.recall_05;
  for (const BandAp& b : r.range_banded) {
    os << " band[" << b.band.lo << ',' << b.band.hi << ")=" << b.ap;
    if (b.empty_gt) os << "(no-gt)";
  }
  os << '\n';
}

std::string report_csv(const EvalReport& r) {
  std::string row = fmt_double(r.ap_03) + "," + fmt_double(r.ap_05) + "," +
                    fmt_double(r.precision_05) + "," + fmt_double(r.recall_05);
  for (const BandAp& b : r.range_banded) row += "," + fmt_double(b.ap);
  return row;
}

int cmd_gen_scenes(const CliOptions& o) {
  const std::string out = resolved_out(o.out_dir);
  if (out.empty()) throw std::runtime_error("gen-scenes: --out is required");
  const auto frames = generate_scene(o.cfg.scene);
  save_scene(frames, out);
  std::cout << "[gen-scenes] wrote " << frames.size() << " frames to " << out << '\n';
  return 0;
}

int cmd_run(const CliOptions& o) {
  const auto frames = obtain_frames(o);
  const std::string out = resolved_out(o.out_dir);
  const RunResult r = run_training(o.cfg, frames, out);
  std::cout << "[run] completed " << r.reports.size() << " iterations\n";
  print_report(std::cout, "[run] first multi pseudo", r.reports.front().multi_pseudo);
  print_report(std::cout, "[run] final multi pseudo", r.reports.back().multi_pseudo);
  print_report(std::cout, "[run] final ego pseudo", r.reports.back().ego_pseudo);
  print_report(std::cout, "[run] multi detector", r.final_multi_detection);
  print_report(std::cout, "[run] ego detector", r.final_ego_detection);
  if (!out.empty()) std::cout << "[run] artifacts in " << out << '\n';
  return 0;
}

int cmd_ablate(const CliOptions& o) {
  const auto frames = obtain_frames(o);
  const std::string out = resolved_out(o.out_dir);
  const auto rows = run_ablation(o.cfg, frames, out);
  std::ofstream csv;
  if (!out.empty()) {
    fs::create_directories(out);
    csv.open(fs::path(out) / "ablation.csv");
    csv << "toggles,view,stage,ap_03,ap_05,precision_05,recall_05,"
           "ap_05_short,ap_05_mid,ap_05_long\n";
  }
  for (const AblationRow& row : rows) {
    print_report(std::cout, "[ablate] " + row.toggles + " multi pseudo", row.multi_pseudo);
    print_report(std::cout, "[ablate] " + row.toggles + " ego pseudo", row.ego_pseudo);
    if (csv) {
      csv << row.toggles << ",multi,pseudo," << report_csv(row.multi_pseudo) << '\n';
      csv << row.toggles << ",ego,pseudo," << report_csv(row.ego_pseudo) << '\n';
      csv << row.toggles << ",multi,detector," << report_csv(row.multi_detection) << '\n';
      csv << row.toggles << ",ego,detector," << report_csv(row.ego_detection) << '\n';
    }
  }
  return 0;
}

int cmd_robustness(const CliOptions& o) {
  const auto frames = obtain_frames(o);
  const std::string out = resolved_out(o.out_dir);
  std::cerr << "[robustness] training reference detectors\n";
  const RunResult trained = run_training(o.cfg, frames);
  const auto rows = run_robustness(o.cfg, frames, trained, o.sigma_m, o.delay_frames);
  std::ofstream csv;
  if (!out.empty()) {
    fs::create_directories(out);
    csv.open(fs::path(out) / "robustness.csv");
    csv << "scenario,model,ap_03,ap_05,precision_05,recall_05,"
           "ap_05_short,ap_05_mid,ap_05_long\n";
  }
  for (const RobustnessRow& row : rows) {
    print_report(std::cout, "[robustness] " + row.scenario + " refined", row.refined_multi);
    print_report(std::cout, "[robustness] " + row.scenario + " baseline", row.baseline_multi);
    if (csv) {
      csv << row.scenario << ",refined," << report_csv(row.refined_multi) << '\n';
      csv << row.scenario << ",baseline," << report_csv(row.baseline_multi) << '\n';
    }
  }
  return 0;
}

int cmd_eval(const CliOptions& o) {
  if (o.scene_dir.empty()) throw std::runtime_error("eval: --scene-dir is required");
  if (o.pred_file.empty()) throw std::runtime_error("eval: --pred is required");
  const auto frames = load_scene(o.scene_dir);
  std::ifstream in(o.pred_file);
  if (!in) throw std::runtime_error("eval: cannot open " + o.pred_file);
  const auto sets = parse_proposals(in);
  std::map<std::string, const ProposalSet*> by_id;
  for (const auto& s : sets) by_id[s.frame_id] = &s;
  const ProposalSet empty;
  std::vector<EvalFrame> ef;
  for (const Frame& f : frames) {
    auto it = by_id.find(f.frame_id);
    ef.push_back({it == by_id.end() ? &empty : it->second, &f.gt_boxes});
  }
  print_report(std::cout, "[eval] " + o.pred_file, evaluate(ef));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised multi-agent 3D-detection refinement pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from an INI-style config file");
  app.allow_config_extras(CLI::config_extras_mode::ignore_all);

  CliOptions o;

  CLI::App* gen = app.add_subcommand("gen-scenes", "Generate a synthetic scene directory");
  add_scene_flags(gen, o.cfg.scene);
  gen->add_option("--out", o.out_dir, "Output scene directory")->required();

  CLI::App* run = app.add_subcommand("run", "Run refinement training");
  add_pipeline_flags(run, o);
  run->add_option("--out", o.out_dir, "Artifact output directory");

  CLI::App* abl = app.add_subcommand("ablate", "Module-toggle comparison");
  add_pipeline_flags(abl, o);
  abl->add_option("--out", o.out_dir, "Artifact output directory");

  CLI::App* rob = app.add_subcommand("robustness", "Perturbation robustness report");
  add_pipeline_flags(rob, o);
  rob->add_option("--out", o.out_dir, "Artifact output directory");
  rob->add_option("--sigma", o.sigma_m, "Pose noise std-dev in meters");
  rob->add_option("--delay", o.delay_frames, "Communication delay in frames");

  CLI::App* ev = app.add_subcommand("eval", "Score a proposal file against ground truth");
  ev->add_option("--scene-dir", o.scene_dir, "Scene directory with ground truth")->required();
  ev->add_option("--pred", o.pred_file, "Proposal record file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_scenes(o);
    if (run->parsed()) return cmd_run(o);
    if (abl->parsed()) return cmd_ablate(o);
    if (rob->parsed()) return cmd_robustness(o);
    if (ev->parsed()) return cmd_eval(o);
  } catch (const std::exception& e) {
    std::cerr << "[error] " << e.what() << '\n';
    return 1;
  }
  return 2;
}
