#pragma once

// Deterministic synthetic multi-agent LiDAR world. Frames come in short
// episodes: a fixed vehicle layout per episode, agents driving straight lanes
// through it, per-frame point realizations sampled from (seed, frame) streams.
// Ground truth lives in Frame::gt_boxes and is consumed only by evaluation.

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "ums/geometry.hpp"
#include "ums/rng.hpp"

namespace ums {

struct IntRange {
  int lo = 0;
  int hi = 0;
  int sample(Rng& rng) const { return rng.uniform_int(lo, hi); }
};

struct SceneConfig {
  int num_frames = 200;
  int num_agents = 2;  // index 0 = ego
  IntRange vehicles_per_frame{6, 12};
  double map_extent = 70.0;  // half-width of the square map, meters
  double points_per_m2_at_10m = 40.0;
  double density_falloff_exponent = 2.0;
  bool occlusion_enabled = true;
  IntRange clutter_clusters_per_frame{2, 5};
  IntRange clutter_cluster_size{30, 150};
  uint64_t rng_seed = 1;

  int episode_length = 20;  // frames per independent vehicle layout
  int ground_points_per_agent = 800;
  double sensor_height = 1.8;

  void validate() const {
    if (num_agents < 1) throw std::invalid_argument("scenesim: num_agents < 1");
    if (map_extent <= 0.0 || points_per_m2_at_10m <= 0.0) {
      throw std::invalid_argument("scenesim: extents and densities must be positive");
    }
    if (vehicles_per_frame.lo < num_agents - 1) {
      throw std::invalid_argument(
          "scenesim: vehicles_per_frame must cover the communicated agents");
    }
    if (episode_length < 1 || num_frames < 1) {
      throw std::invalid_argument("scenesim: frame counts must be positive");
    }
  }
};

struct Frame {
  std::string frame_id;
  std::vector<PoseSE3> agent_poses;    // agent -> world
  std::vector<PointCloud> agent_clouds;  // each in its own agent frame
  std::vector<Box3D> agent_self_boxes;   // each in its own agent frame
  std::vector<Box3D> gt_boxes;           // ego frame; evaluation only
};

/// Positional priors of communicated agents, expressed in the ego frame.
/// This is the only channel the detector initialization may read.
inline std::vector<Box3D> comm_prior_boxes(const Frame& frame) {
  std::vector<Box3D> out;
  const PoseSE3 ego_inv = frame.agent_poses[0].inverse();
  for (size_t v = 1; v < frame.agent_poses.size(); ++v) {
    if (frame.agent_self_boxes[v].l <= 0.0) continue;  // dropped by latency
    out.push_back(transform_box(frame.agent_self_boxes[v],
                                ego_inv.compose(frame.agent_poses[v])));
  }
  return out;
}

namespace detail {

struct LaneAgent {
  double lane_y = 0.0;
  double x_start = 0.0;
  double speed = 0.0;  // meters per frame, signed
  double yaw = 0.0;
  Box3D body;  // dims only; center tracks the pose
};

struct EpisodeLayout {
  std::vector<LaneAgent> agents;  // index 0 = ego
  std::vector<Box3D> static_vehicles;  // world frame
  struct Clutter {
    double cx, cy, sigma, z_lo, z_hi;
    int size;
  };
  std::vector<Clutter> clutter;
  int total_vehicles = 0;  // static + communicated agents
};

inline Box3D sample_vehicle_dims(Rng& rng) {
  Box3D b;
  b.l = rng.uniform(3.5, 5.5);
  b.w = rng.uniform(1.6, 2.2);
  b.h = rng.uniform(1.4, 1.9);
  b.cz = 0.5 * b.h;
  return b;
}

inline bool segment_hits_footprint(const Vec2& a, const Vec2& b, const Box3D& box) {
  // Sample the segment; coarse but adequate for per-face shadowing.
  const int steps = 24;
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double hl = 0.5 * box.l, hw = 0.5 * box.w;
  for (int i = 1; i < steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const double x = a.x + t * (b.x - a.x) - box.cx;
    const double y = a.y + t * (b.y - a.y) - box.cy;
    const double lx = c * x + s * y, ly = -s * x + c * y;
    if (std::abs(lx) <= hl && std::abs(ly) <= hw) return true;
  }
  return false;
}

inline bool footprints_clear(const Box3D& a, const Box3D& b, double margin) {
  Box3D ia = a, ib = b;
  ia.l += margin;
  ia.w += margin;
  ib.l += margin;
  ib.w += margin;
  return rotated_iou_bev(ia, ib) == 0.0;
}

inline EpisodeLayout build_episode(const SceneConfig& cfg, int episode) {
  Rng rng = Rng::derive(cfg.rng_seed, 0xE0000000ull + static_cast<uint64_t>(episode));
  EpisodeLayout layout;
  layout.total_vehicles = cfg.vehicles_per_frame.sample(rng);

  // Agents drive straight lanes; odd communicated agents run the opposite way.
  for (int a = 0; a < cfg.num_agents; ++a) {
    LaneAgent ag;
    ag.body = sample_vehicle_dims(rng);
    if (a == 0) {
      ag.lane_y = 0.0;
      ag.yaw = 0.0;
      ag.speed = rng.uniform(0.8, 1.2);
      ag.x_start = -cfg.map_extent * 0.4;
    } else {
      const int side = (a % 2 == 1) ? 1 : -1;
      ag.lane_y = side * (4.0 + 4.0 * ((a + 1) / 2));
      const bool reverse = (a % 2 == 0);
      ag.yaw = reverse ? kPi : 0.0;
      ag.speed = (reverse ? -1.0 : 1.0) * rng.uniform(0.8, 1.2);
      ag.x_start = (reverse ? 1.0 : -1.0) * cfg.map_extent * 0.4 +
                   rng.uniform(-5.0, 5.0);
    }
    layout.agents.push_back(ag);
  }

  // Swept corridors the static vehicles must stay clear of.
  std::vector<Box3D> corridors;
  for (const LaneAgent& ag : layout.agents) {
    const double x_end = ag.x_start + ag.speed * cfg.episode_length;
    Box3D c;
    c.cx = 0.5 * (ag.x_start + x_end);
    c.cy = ag.lane_y;
    c.l = std::abs(x_end - ag.x_start) + ag.body.l + 2.0;
    c.w = ag.body.w + 2.0;
    c.h = 4.0;
    c.cz = 1.0;
    corridors.push_back(c);
  }

  const int num_static = layout.total_vehicles - (cfg.num_agents - 1);
  for (int i = 0; i < num_static; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 300 && !placed; ++attempt) {
      Box3D v = sample_vehicle_dims(rng);
      v.cx = rng.uniform(-cfg.map_extent + 4.0, cfg.map_extent - 4.0);
      v.cy = rng.uniform(-cfg.map_extent + 4.0, cfg.map_extent - 4.0);
      v.yaw = rng.uniform(-kPi, kPi);
      bool ok = true;
      for (const Box3D& c : corridors) ok = ok && footprints_clear(v, c, 0.0);
      for (const Box3D& o : layout.static_vehicles) {
        ok = ok && footprints_clear(v, o, 1.5);
      }
      if (ok) {
        layout.static_vehicles.push_back(v);
        placed = true;
      }
    }
    if (!placed) {
      throw std::runtime_error(
          "scenesim: unsatisfiable vehicle placement in episode " +
          std::to_string(episode) + " (frame " +
          std::to_string(episode * cfg.episode_length) + ")");
    }
  }

  const int num_clutter = cfg.clutter_clusters_per_frame.sample(rng);
  for (int i = 0; i < num_clutter; ++i) {
    for (int attempt = 0; attempt < 300; ++attempt) {
      EpisodeLayout::Clutter cl;
      cl.cx = rng.uniform(-cfg.map_extent + 2.0, cfg.map_extent - 2.0);
      cl.cy = rng.uniform(-cfg.map_extent + 2.0, cfg.map_extent - 2.0);
      cl.sigma = rng.uniform(0.3, 1.0);
      cl.z_lo = 0.35;
      cl.z_hi = cl.z_lo + rng.uniform(0.5, 1.2);
      cl.size = cfg.clutter_cluster_size.sample(rng);
      Box3D blob;
      blob.cx = cl.cx;
      blob.cy = cl.cy;
      blob.l = blob.w = 6.0 * cl.sigma;
      bool ok = true;
      for (const Box3D& c : corridors) ok = ok && footprints_clear(blob, c, 0.0);
      for (const Box3D& o : layout.static_vehicles) {
        ok = ok && footprints_clear(blob, o, 2.0);
      }
      if (ok) {
        layout.clutter.push_back(cl);
        break;
      }
    }
  }
  return layout;
}

// All vehicle bodies visible in this frame (world coordinates), with the index
// of the agent they belong to (-1 for static vehicles, 0 for the ego body).
struct WorldVehicle {
  Box3D box;
  int agent = -1;
};

inline std::vector<WorldVehicle> world_vehicles(const EpisodeLayout& layout,
                                                int frame_in_episode) {
  std::vector<WorldVehicle> out;
  for (size_t a = 0; a < layout.agents.size(); ++a) {
    const LaneAgent& ag = layout.agents[a];
    Box3D b = ag.body;
    b.cx = ag.x_start + ag.speed * frame_in_episode;
    b.cy = ag.lane_y;
    b.yaw = ag.yaw;
    out.push_back({b, static_cast<int>(a)});
  }
  for (const Box3D& v : layout.static_vehicles) out.push_back({v, -1});
  return out;
}

inline void sample_vehicle_faces(const SceneConfig& cfg, Rng& rng,
                                 const Point3& sensor, const Box3D& box,
                                 const std::vector<WorldVehicle>& all,
                                 size_t owner_idx, int observer_agent,
                                 std::vector<Point3>& out_world) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  // Four side faces: local outward normal and face-plane parameters.
  struct Face {
    double nx, ny;   // local outward normal
    double off;      // distance of the plane from center along the normal
    double span;     // lateral half-span on the face
  };
  const Face faces[4] = {{1, 0, 0.5 * box.l, 0.5 * box.w},
                         {-1, 0, 0.5 * box.l, 0.5 * box.w},
                         {0, 1, 0.5 * box.w, 0.5 * box.l},
                         {0, -1, 0.5 * box.w, 0.5 * box.l}};
  for (const Face& f : faces) {
    const double wnx = c * f.nx - s * f.ny;
    const double wny = s * f.nx + c * f.ny;
    const double fcx = box.cx + wnx * f.off;
    const double fcy = box.cy + wny * f.off;
    // Back-facing test against the sensor.
    if (wnx * (sensor.x - fcx) + wny * (sensor.y - fcy) <= 0.0) continue;
    if (cfg.occlusion_enabled) {
      bool shadowed = false;
      for (size_t k = 0; k < all.size() && !shadowed; ++k) {
        if (k == owner_idx) continue;
        // The sensor sits inside its own vehicle's footprint; that body must
        // not shadow the rest of the scene.
        if (all[k].agent == observer_agent) continue;
        shadowed = segment_hits_footprint({sensor.x, sensor.y}, {fcx, fcy},
                                          all[k].box);
      }
      if (shadowed) continue;
    }
    const double dx = fcx - sensor.x, dy = fcy - sensor.y;
    const double dz = box.cz - sensor.z;
    const double range = std::max(1.0, std::sqrt(dx * dx + dy * dy + dz * dz));
    const double density = cfg.points_per_m2_at_10m *
                           std::pow(10.0 / range, cfg.density_falloff_exponent);
    const double area = 2.0 * f.span * box.h;
    int count = rng.poisson(density * area);
    count = std::min(count, 3000);
    const double inset = 1e-3;
    // Tangent direction along the face in world coordinates.
    const double tx = -wny, ty = wnx;
    for (int i = 0; i < count; ++i) {
      const double u = rng.uniform(-f.span + inset, f.span - inset);
      const double z = box.cz + rng.uniform(-0.5 * box.h + inset, 0.5 * box.h - inset);
      out_world.push_back({fcx - wnx * inset + tx * u, fcy - wny * inset + ty * u, z});
    }
  }

  // Roof face: visible whenever the sensor sits above the top plane. This is
  // what lets a return cluster span the full footprint even when only one
  // side face is exposed.
  const double top_z = box.cz + 0.5 * box.h;
  if (sensor.z > top_z) {
    if (cfg.occlusion_enabled) {
      bool shadowed = false;
      for (size_t k = 0; k < all.size() && !shadowed; ++k) {
        if (k == owner_idx || all[k].agent == observer_agent) continue;
        shadowed = segment_hits_footprint({sensor.x, sensor.y}, {box.cx, box.cy},
                                          all[k].box);
      }
      if (shadowed) return;
    }
    const double dx = box.cx - sensor.x, dy = box.cy - sensor.y;
    const double dz = top_z - sensor.z;
    const double range = std::max(1.0, std::sqrt(dx * dx + dy * dy + dz * dz));
    const double density = cfg.points_per_m2_at_10m *
                           std::pow(10.0 / range, cfg.density_falloff_exponent);
    int count = rng.poisson(density * box.l * box.w);
    count = std::min(count, 3000);
    const double inset = 1e-3;
    for (int i = 0; i < count; ++i) {
      const double u = rng.uniform(-0.5 * box.l + inset, 0.5 * box.l - inset);
      const double v = rng.uniform(-0.5 * box.w + inset, 0.5 * box.w - inset);
      out_world.push_back({box.cx + c * u - s * v, box.cy + s * u + c * v,
                           top_z - inset});
    }
  }
}

}  // namespace detail

/// Union of all agent clouds mapped into the ego frame through
/// T_{v->e} = pose_e^{-1} o pose_v. The ego cloud passes through untouched.
inline PointCloud fuse_to_ego(const Frame& frame) {
  PointCloud out;
  out.source_agent = "fused";
  const PoseSE3 ego_inv = frame.agent_poses[0].inverse();
  size_t total = 0;
  for (const PointCloud& c : frame.agent_clouds) total += c.points.size();
  out.points.reserve(total);
  for (size_t v = 0; v < frame.agent_clouds.size(); ++v) {
    if (v == 0) {
      out.points.insert(out.points.end(), frame.agent_clouds[0].points.begin(),
                        frame.agent_clouds[0].points.end());
      continue;
    }
    const PoseSE3 rel = ego_inv.compose(frame.agent_poses[v]);
    for (const Point3& p : frame.agent_clouds[v].points) {
      out.points.push_back(rel.apply(p));
    }
  }
  return out;
}

inline std::vector<Frame> generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  std::vector<Frame> frames;
  frames.reserve(cfg.num_frames);
  const int num_episodes = (cfg.num_frames + cfg.episode_length - 1) / cfg.episode_length;
  std::vector<detail::EpisodeLayout> layouts;
  for (int e = 0; e < num_episodes; ++e) {
    layouts.push_back(detail::build_episode(cfg, e));
  }

  for (int t = 0; t < cfg.num_frames; ++t) {
    const int episode = t / cfg.episode_length;
    const int tl = t % cfg.episode_length;
    const detail::EpisodeLayout& layout = layouts[episode];
    Rng rng = Rng::derive(cfg.rng_seed, static_cast<uint64_t>(t));

    Frame frame;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "f%06d", t);
    frame.frame_id = buf;

    const auto vehicles = detail::world_vehicles(layout, tl);
    for (int a = 0; a < cfg.num_agents; ++a) {
      const detail::LaneAgent& ag = layout.agents[a];
      PoseSE3 pose{ag.x_start + ag.speed * tl, ag.lane_y, 0.0, ag.yaw};
      frame.agent_poses.push_back(pose);
      Box3D self = ag.body;  // agent-local: centered at the sensor footprint
      self.cx = self.cy = 0.0;
      self.yaw = 0.0;
      frame.agent_self_boxes.push_back(self);
    }

    for (int a = 0; a < cfg.num_agents; ++a) {
      const PoseSE3& pose = frame.agent_poses[a];
      const PoseSE3 inv = pose.inverse();
      const Point3 sensor{pose.tx, pose.ty, cfg.sensor_height};
      PointCloud cloud;
      cloud.source_agent = "agent" + std::to_string(a);
      std::vector<Point3> world_pts;

      for (size_t k = 0; k < vehicles.size(); ++k) {
        if (vehicles[k].agent == a) continue;  // the sensor's own body
        if (vehicles[k].agent == 0) continue;  // ego body is never emitted
        detail::sample_vehicle_faces(cfg, rng, sensor, vehicles[k].box, vehicles,
                                     k, a, world_pts);
      }
      for (const detail::EpisodeLayout::Clutter& cl : layout.clutter) {
        const double dx = cl.cx - pose.tx, dy = cl.cy - pose.ty;
        const double range = std::max(5.0, std::sqrt(dx * dx + dy * dy));
        const double scale = std::pow(10.0 / range, cfg.density_falloff_exponent);
        const int count = std::min(cl.size, rng.poisson(cl.size * scale * 4.0));
        for (int i = 0; i < count; ++i) {
          world_pts.push_back({rng.normal(cl.cx, cl.sigma),
                               rng.normal(cl.cy, cl.sigma),
                               rng.uniform(cl.z_lo, cl.z_hi)});
        }
      }
      for (const Point3& p : world_pts) cloud.points.push_back(inv.apply(p));
      // Ground return disc around the sensor, sampled directly in agent frame.
      for (int i = 0; i < cfg.ground_points_per_agent; ++i) {
        const double r = std::sqrt(rng.uniform()) * 50.0;
        const double th = rng.uniform(0.0, 2.0 * kPi);
        double z = rng.normal(0.0, 0.02);
        z = std::clamp(z, -0.1, 0.1);
        cloud.points.push_back({r * std::cos(th), r * std::sin(th), z});
      }
      frame.agent_clouds.push_back(std::move(cloud));
    }

    const PoseSE3 ego_inv = frame.agent_poses[0].inverse();
    for (const detail::WorldVehicle& v : vehicles) {
      if (v.agent == 0) continue;  // ego body is not a ground-truth object
      frame.gt_boxes.push_back(transform_box(v.box, ego_inv));
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

/// Gaussian localization noise on non-ego poses: std sigma_m on x and y,
/// optional 0.2 deg yaw noise. Ground truth and the ego pose stay untouched.
inline std::vector<Frame> perturb_poses(const std::vector<Frame>& frames,
                                        double sigma_m, uint64_t seed,
                                        bool yaw_noise = true) {
  if (sigma_m < 0.0) throw std::invalid_argument("perturb_poses: sigma_m < 0");
  const double yaw_std = yaw_noise ? 0.2 * kPi / 180.0 : 0.0;
  std::vector<Frame> out = frames;
  for (size_t t = 0; t < out.size(); ++t) {
    Rng rng = Rng::derive(seed, 0xA0000000ull + t);
    for (size_t v = 1; v < out[t].agent_poses.size(); ++v) {
      PoseSE3& pose = out[t].agent_poses[v];
      pose.tx += rng.normal(0.0, sigma_m);
      pose.ty += rng.normal(0.0, sigma_m);
      pose.yaw = normalize_yaw(pose.yaw + rng.normal(0.0, yaw_std));
    }
  }
  return out;
}

/// Communication latency: non-ego clouds and poses in frame t come from frame
/// t - delay_frames. Early frames drop their non-ego data entirely.
inline std::vector<Frame> apply_latency(const std::vector<Frame>& frames,
                                        int delay_frames) {
  if (delay_frames < 0) throw std::invalid_argument("apply_latency: negative delay");
  if (delay_frames == 0) return frames;
  std::vector<Frame> out = frames;
  for (int t = static_cast<int>(out.size()) - 1; t >= 0; --t) {
    const int src = t - delay_frames;
    for (size_t v = 1; v < out[t].agent_poses.size(); ++v) {
      if (src < 0) {
        out[t].agent_clouds[v].points.clear();
        out[t].agent_self_boxes[v] = Box3D{0, 0, 0, 0, 0, 0, 0};
      } else {
        out[t].agent_clouds[v] = frames[src].agent_clouds[v];
        out[t].agent_poses[v] = frames[src].agent_poses[v];
        out[t].agent_self_boxes[v] = frames[src].agent_self_boxes[v];
      }
    }
  }
  return out;
}

}  // namespace ums
