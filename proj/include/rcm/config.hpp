#pragma once

#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "rcm/errors.hpp"
#include "rcm/geometry.hpp"
#include "rcm/profiler.hpp"
#include "rcm/simulator.hpp"
#include "rcm/solver.hpp"

namespace rcm {

/// Gate applied to every inbound command before it may reach the solver.
struct SafetyConfig {
  Vec3 workspace_min = Vec3(-0.05, -0.05, -0.08);  // tip box, base frame
  Vec3 workspace_max = Vec3(0.05, 0.05, 0.08);
  double staleness_budget = 0.1;  // s
};

struct ServerConfig {
  int tcp_port = 5555;
  int ws_port = 8765;
  double stream_hz = 60.0;
  bool test_mode = false;
  Pose camera_pose;  // camera frame in the instrument robot base frame
};

/// Everything one configuration file holds. See docs/formats.md.
struct Config {
  SimConfig sim;
  SafetyConfig safety;
  ServerConfig server;
};

namespace detail {

inline Vec3 read_vec3(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 3) {
    throw Error(Errc::invalid_argument, std::string("config: '") + key + "' must be [x, y, z]");
  }
  return Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
}

inline Pose read_pose(const nlohmann::json& j) {
  Pose p;
  if (j.contains("position")) {
    p.position = read_vec3(j, "position");
  }
  if (j.contains("orientation_wxyz")) {
    const auto& q = j.at("orientation_wxyz");
    if (!q.is_array() || q.size() != 4) {
      throw Error(Errc::invalid_argument, "config: orientation_wxyz must have 4 entries");
    }
    p.orientation = Rotation(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                             q[3].get<double>());
    if (!(p.orientation.norm() > 0.0)) {
      throw Error(Errc::invalid_argument, "config: zero quaternion");
    }
    p.orientation.normalize();
  }
  return p;
}

inline nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline nlohmann::json pose_json(const Pose& p) {
  const Rotation& q = p.orientation;
  return {{"position", vec_json(p.position)}, {"orientation_wxyz", {q.w(), q.x(), q.y(), q.z()}}};
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    out = j.at(key).get<T>();
  }
}

inline void read_limits(const nlohmann::json& j, ProfilerLimits& lim) {
  read_opt(j, "max_accel", lim.max_accel);
  read_opt(j, "max_jerk", lim.max_jerk);
  read_opt(j, "base_duration", lim.base_duration);
}

}  // namespace detail

/// Missing sections and keys keep their defaults.
inline Config config_from_json(const nlohmann::json& j) {
  using detail::read_opt;
  Config cfg;
  try {
    if (j.contains("rcm")) {
      const auto& r = j["rcm"];
      if (r.contains("p_rcm")) cfg.sim.rcm.p_rcm = detail::read_vec3(r, "p_rcm");
      read_opt(r, "min_insertion", cfg.sim.rcm.min_insertion);
      read_opt(r, "max_insertion", cfg.sim.rcm.max_insertion);
      read_opt(r, "max_tip_speed", cfg.sim.rcm.max_tip_speed);
      read_opt(r, "max_angular_rate", cfg.sim.rcm.max_angular_rate);
    }
    if (j.contains("calibration")) {
      const auto& c = j["calibration"];
      if (c.contains("tip_offset_flange")) {
        cfg.sim.calib.tip_offset_flange = detail::read_vec3(c, "tip_offset_flange");
      }
      if (c.contains("shaft_dir_flange")) {
        cfg.sim.calib.shaft_dir_flange = detail::read_vec3(c, "shaft_dir_flange");
      }
    }
    if (j.contains("profiler")) {
      const auto& p = j["profiler"];
      if (p.contains("linear")) detail::read_limits(p["linear"], cfg.sim.linear_limits);
      if (p.contains("angular")) detail::read_limits(p["angular"], cfg.sim.angular_limits);
    }
    if (j.contains("simulation")) {
      const auto& s = j["simulation"];
      read_opt(s, "dt", cfg.sim.dt);
      if (s.contains("initial_flange")) cfg.sim.initial_flange = detail::read_pose(s["initial_flange"]);
      if (s.contains("perturbation") && !s["perturbation"].is_null()) {
        Perturbation pert;
        read_opt(s["perturbation"], "amplitude", pert.amplitude);
        read_opt(s["perturbation"], "frequency", pert.frequency);
        cfg.sim.perturbation = pert;
      }
    }
    if (j.contains("safety")) {
      const auto& s = j["safety"];
      if (s.contains("workspace_min")) cfg.safety.workspace_min = detail::read_vec3(s, "workspace_min");
      if (s.contains("workspace_max")) cfg.safety.workspace_max = detail::read_vec3(s, "workspace_max");
      read_opt(s, "staleness_budget", cfg.safety.staleness_budget);
    }
    if (j.contains("server")) {
      const auto& s = j["server"];
      read_opt(s, "tcp_port", cfg.server.tcp_port);
      read_opt(s, "ws_port", cfg.server.ws_port);
      read_opt(s, "stream_hz", cfg.server.stream_hz);
      read_opt(s, "test_mode", cfg.server.test_mode);
      if (s.contains("camera_pose")) cfg.server.camera_pose = detail::read_pose(s["camera_pose"]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_argument, std::string("config: ") + e.what());
  }
  cfg.sim.validate();
  if (!(cfg.safety.staleness_budget > 0.0) ||
      !(cfg.safety.workspace_min.array() < cfg.safety.workspace_max.array()).all()) {
    throw Error(Errc::invalid_argument, "config: bad safety section");
  }
  if (!(cfg.server.stream_hz > 0.0)) {
    throw Error(Errc::invalid_argument, "config: stream_hz must be positive");
  }
  return cfg;
}

inline nlohmann::json config_to_json(const Config& cfg) {
  using detail::vec_json;
  nlohmann::json j;
  const auto& r = cfg.sim.rcm;
  j["rcm"] = {{"p_rcm", vec_json(r.p_rcm)},
              {"min_insertion", r.min_insertion},
              {"max_insertion", r.max_insertion},
              {"max_tip_speed", r.max_tip_speed},
              {"max_angular_rate", r.max_angular_rate}};
  j["calibration"] = {{"tip_offset_flange", vec_json(cfg.sim.calib.tip_offset_flange)},
                      {"shaft_dir_flange", vec_json(cfg.sim.calib.shaft_dir_flange)}};
  const auto limits = [](const ProfilerLimits& l) {
    return nlohmann::json{{"max_accel", l.max_accel}, {"max_jerk", l.max_jerk},
                          {"base_duration", l.base_duration}};
  };
  j["profiler"] = {{"linear", limits(cfg.sim.linear_limits)}, {"angular", limits(cfg.sim.angular_limits)}};
  j["simulation"] = {{"dt", cfg.sim.dt}, {"initial_flange", detail::pose_json(cfg.sim.initial_flange)}};
  if (cfg.sim.perturbation) {
    j["simulation"]["perturbation"] = {{"amplitude", cfg.sim.perturbation->amplitude},
                                       {"frequency", cfg.sim.perturbation->frequency}};
  }
  j["safety"] = {{"workspace_min", vec_json(cfg.safety.workspace_min)},
                 {"workspace_max", vec_json(cfg.safety.workspace_max)},
                 {"staleness_budget", cfg.safety.staleness_budget}};
  j["server"] = {{"tcp_port", cfg.server.tcp_port},
                 {"ws_port", cfg.server.ws_port},
                 {"stream_hz", cfg.server.stream_hz},
                 {"test_mode", cfg.server.test_mode},
                 {"camera_pose", detail::pose_json(cfg.server.camera_pose)}};
  return j;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::io_failure, "cannot open config '" + path + "'");
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_argument, "config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

}  // namespace rcm
