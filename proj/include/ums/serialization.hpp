#pragma once

// Text serialization: line-delimited proposal records, scene directories,
// memory-bank snapshots and flat-text model checkpoints. All numerics are
// written with printf "%.17g" so round trips and determinism checks are exact.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ums/geometry.hpp"
#include "ums/ppf.hpp"
#include "ums/pps.hpp"
#include "ums/scenesim.hpp"
#include "ums/weakdet.hpp"

namespace ums {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---- proposal records ------------------------------------------------------
// One record per line: frame_id,view,cx,cy,cz,l,w,h,yaw,confidence

inline std::string proposal_record(const std::string& frame_id, View view,
                                   const Proposal& p) {
  std::ostringstream os;
  os << frame_id << ',' << view_name(view) << ',' << fmt_double(p.box.cx) << ','
     << fmt_double(p.box.cy) << ',' << fmt_double(p.box.cz) << ','
     << fmt_double(p.box.l) << ',' << fmt_double(p.box.w) << ','
     << fmt_double(p.box.h) << ',' << fmt_double(p.box.yaw) << ','
     << fmt_double(p.confidence);
  return os.str();
}

inline std::string serialize_proposals(const ProposalSet& set) {
  std::string out;
  for (const Proposal& p : set.items) {
    out += proposal_record(set.frame_id, set.view, p);
    out += '\n';
  }
  return out;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  return out;
}

/// Parse proposal records; lines may mix frame ids. Returns per-frame sets in
/// first-appearance order.
inline std::vector<ProposalSet> parse_proposals(std::istream& in) {
  std::vector<ProposalSet> sets;
  std::map<std::string, size_t> index;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 10) {
      throw std::runtime_error("parse_proposals: malformed record: " + line);
    }
    const std::string key = f[0] + "/" + f[1];
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, sets.size()).first;
      ProposalSet s;
      s.frame_id = f[0];
      s.view = f[1] == "ego" ? View::ego : View::multi;
      sets.push_back(std::move(s));
    }
    Proposal p;
    p.box.cx = std::stod(f[2]);
    p.box.cy = std::stod(f[3]);
    p.box.cz = std::stod(f[4]);
    p.box.l = std::stod(f[5]);
    p.box.w = std::stod(f[6]);
    p.box.h = std::stod(f[7]);
    p.box.yaw = std::stod(f[8]);
    p.confidence = std::stod(f[9]);
    sets[it->second].items.push_back(p);
  }
  return sets;
}

// ---- scenes ----------------------------------------------------------------
// One directory per scene: frame_XXXXXX.txt with poses, self boxes and point
// arrays; ground_truth.txt holds the simulator-private boxes for evaluation.

inline std::string serialize_frame(const Frame& frame) {
  std::ostringstream os;
  os << "frame " << frame.frame_id << ' ' << frame.agent_poses.size() << '\n';
  for (size_t v = 0; v < frame.agent_poses.size(); ++v) {
    const PoseSE3& p = frame.agent_poses[v];
    os << "pose " << v << ' ' << fmt_double(p.tx) << ' ' << fmt_double(p.ty)
       << ' ' << fmt_double(p.tz) << ' ' << fmt_double(p.yaw) << '\n';
    const Box3D& b = frame.agent_self_boxes[v];
    os << "selfbox " << v << ' ' << fmt_double(b.cx) << ' ' << fmt_double(b.cy)
       << ' ' << fmt_double(b.cz) << ' ' << fmt_double(b.l) << ' '
       << fmt_double(b.w) << ' ' << fmt_double(b.h) << ' ' << fmt_double(b.yaw)
       << '\n';
    const PointCloud& c = frame.agent_clouds[v];
    os << "points " << v << ' ' << c.points.size() << '\n';
    for (const Point3& pt : c.points) {
      os << fmt_double(pt.x) << ' ' << fmt_double(pt.y) << ' ' << fmt_double(pt.z)
         << '\n';
    }
  }
  return os.str();
}

inline void save_scene(const std::vector<Frame>& frames,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream gt(dir / "ground_truth.txt");
  for (const Frame& frame : frames) {
    std::ofstream out(dir / ("frame_" + frame.frame_id.substr(1) + ".txt"));
    out << serialize_frame(frame);
    for (const Box3D& b : frame.gt_boxes) {
      gt << frame.frame_id << ' ' << fmt_double(b.cx) << ' ' << fmt_double(b.cy)
         << ' ' << fmt_double(b.cz) << ' ' << fmt_double(b.l) << ' '
         << fmt_double(b.w) << ' ' << fmt_double(b.h) << ' ' << fmt_double(b.yaw)
         << '\n';
    }
  }
}

inline std::vector<Frame> load_scene(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("frame_", 0) == 0) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Frame> frames;
  for (const auto& path : files) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_scene: cannot open " + path.string());
    Frame frame;
    std::string tag;
    size_t num_agents = 0;
    in >> tag >> frame.frame_id >> num_agents;
    if (tag != "frame") throw std::runtime_error("load_scene: bad header in " + path.string());
    frame.agent_poses.resize(num_agents);
    frame.agent_self_boxes.resize(num_agents);
    frame.agent_clouds.resize(num_agents);
    for (size_t v = 0; v < num_agents; ++v) {
      size_t idx = 0, n = 0;
      PoseSE3& p = frame.agent_poses[v];
      in >> tag >> idx >> p.tx >> p.ty >> p.tz >> p.yaw;
      Box3D& b = frame.agent_self_boxes[v];
      in >> tag >> idx >> b.cx >> b.cy >> b.cz >> b.l >> b.w >> b.h >> b.yaw;
      in >> tag >> idx >> n;
      frame.agent_clouds[v].source_agent = "agent" + std::to_string(v);
      frame.agent_clouds[v].points.resize(n);
      for (size_t i = 0; i < n; ++i) {
        Point3& pt = frame.agent_clouds[v].points[i];
        in >> pt.x >> pt.y >> pt.z;
      }
    }
    frames.push_back(std::move(frame));
  }
  std::ifstream gt(dir / "ground_truth.txt");
  if (gt) {
    std::map<std::string, size_t> by_id;
    for (size_t i = 0; i < frames.size(); ++i) by_id[frames[i].frame_id] = i;
    std::string id;
    Box3D b;
    while (gt >> id >> b.cx >> b.cy >> b.cz >> b.l >> b.w >> b.h >> b.yaw) {
      auto it = by_id.find(id);
      if (it != by_id.end()) frames[it->second].gt_boxes.push_back(b);
    }
  }
  return frames;
}

// ---- memory bank -----------------------------------------------------------

inline void save_bank(const MemoryBank& bank, const std::filesystem::path& path) {
  std::ofstream out(path);
  for (const auto& [frame_id, entry] : bank.entries) {
    for (const Proposal& p : entry) {
      out << proposal_record(frame_id, View::multi, p) << '\n';
    }
    if (entry.empty()) out << frame_id << ",multi,empty\n";
  }
}

inline MemoryBank load_bank(const std::filesystem::path& path) {
  MemoryBank bank;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_bank: cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() == 3 && f[2] == "empty") {
      bank.entries[f[0]];
      continue;
    }
    if (f.size() != 10) throw std::runtime_error("load_bank: malformed record: " + line);
    Proposal p;
    p.box.cx = std::stod(f[2]);
    p.box.cy = std::stod(f[3]);
    p.box.cz = std::stod(f[4]);
    p.box.l = std::stod(f[5]);
    p.box.w = std::stod(f[6]);
    p.box.h = std::stod(f[7]);
    p.box.yaw = std::stod(f[8]);
    p.confidence = std::stod(f[9]);
    bank.entries[f[0]].push_back(p);
  }
  return bank;
}

// ---- checkpoints -----------------------------------------------------------
// Flat text: "name count v0 v1 ..." per parameter vector.

namespace detail {

inline void write_vector(std::ostream& os, const std::string& name,
                         const std::vector<double>& v) {
  os << name << ' ' << v.size();
  for (double x : v) os << ' ' << fmt_double(x);
  os << '\n';
}

inline std::map<std::string, std::vector<double>> read_named_vectors(std::istream& in) {
  std::map<std::string, std::vector<double>> out;
  std::string name;
  size_t n = 0;
  while (in >> name >> n) {
    std::vector<double> v(n);
    for (size_t i = 0; i < n; ++i) in >> v[i];
    out[name] = std::move(v);
  }
  return out;
}

}  // namespace detail

inline void save_detector(const DetectorModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  detail::write_vector(out, "scorer_weights", model.scorer_weights);
  detail::write_vector(out, "scorer_bias", {model.scorer_bias});
  std::vector<double> offs;
  for (const auto& o : model.box_offset) {
    offs.push_back(o[0]);
    offs.push_back(o[1]);
  }
  detail::write_vector(out, "box_offset", offs);
  detail::write_vector(out, "cluster_params",
                       {static_cast<double>(model.min_cluster_points),
                        model.cluster_cell_size, model.ground_z_threshold,
                        model.min_confidence});
}

inline DetectorModel load_detector(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_detector: cannot open " + path.string());
  auto vecs = detail::read_named_vectors(in);
  DetectorModel m;
  m.scorer_weights = vecs.at("scorer_weights");
  m.scorer_bias = vecs.at("scorer_bias").at(0);
  const auto& offs = vecs.at("box_offset");
  for (int d = 0; d < 4; ++d) m.box_offset[d] = {offs.at(2 * d), offs.at(2 * d + 1)};
  const auto& cp = vecs.at("cluster_params");
  m.min_cluster_points = static_cast<int>(cp.at(0));
  m.cluster_cell_size = cp.at(1);
  m.ground_z_threshold = cp.at(2);
  m.min_confidence = cp.at(3);
  return m;
}

inline void save_classifier(const PpfClassifier& clf, const std::filesystem::path& path) {
  std::ofstream out(path);
  detail::write_vector(out, "weights", clf.weights);
  detail::write_vector(out, "bias", {clf.bias});
  detail::write_vector(out, "feat_mean", clf.feat_mean);
  detail::write_vector(out, "feat_std", clf.feat_std);
  detail::write_vector(out, "trained", {clf.trained ? 1.0 : 0.0});
}

inline PpfClassifier load_classifier(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_classifier: cannot open " + path.string());
  auto vecs = detail::read_named_vectors(in);
  PpfClassifier clf;
  clf.weights = vecs.at("weights");
  clf.bias = vecs.at("bias").at(0);
  clf.feat_mean = vecs.at("feat_mean");
  clf.feat_std = vecs.at("feat_std");
  clf.trained = vecs.at("trained").at(0) != 0.0;
  return clf;
}

}  // namespace ums
