#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>

#include "rcm/errors.hpp"
#include "rcm/geometry.hpp"
#include "rcm/profiler.hpp"
#include "rcm/script.hpp"
#include "rcm/solver.hpp"
#include "rcm/trajectory_io.hpp"

namespace rcm {

/// Sinusoidal lateral displacement of the true trocar point. The controller
/// keeps targeting the nominal p_rcm, so the shaft line drifts off it by
/// amplitude * |sin(2 pi f t)|.
struct Perturbation {
  double amplitude = 0.0;  // m
  double frequency = 0.5;  // Hz
};

struct SimConfig {
  double dt = 0.002;
  RcmConfig rcm;
  ShaftCalibration calib;
  ProfilerLimits linear_limits{0.05, 0.5, 0.5};  // tip x/y/z and insertion, m
  ProfilerLimits angular_limits{1.0, 10.0, 0.5};  // pitch/yaw/roll, rad
  Pose initial_flange = Pose::translation(Vec3(0.0, 0.0, 0.3));
  std::optional<Perturbation> perturbation;

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) {
      throw Error(Errc::invalid_argument, "simulation: dt must be positive");
    }
    rcm.validate();
    calib.validate();
    linear_limits.validate();
    angular_limits.validate();
    if (perturbation && !(perturbation->amplitude >= 0.0 && perturbation->frequency >= 0.0)) {
      throw Error(Errc::invalid_argument, "simulation: perturbation must be non-negative");
    }
  }
};

struct SimState {
  std::uint64_t tick = 0;
  double time = 0.0;
  Pose flange;
  InstrumentState instrument;
  Twist last_twist;
};

/// Shaft axis in the base frame for a given flange pose.
inline Vec3 shaft_direction(const Pose& flange, const ShaftCalibration& calib) {
  return rotate(flange.orientation, calib.shaft_dir_flange).normalized();
}

/// Distance from `p_rcm` to the infinite shaft line of a flange pose.
inline double shaft_line_deviation(const Pose& flange, const ShaftCalibration& calib,
                                   const Vec3& p_rcm) {
  const Vec3 tip = flange.position + rotate(flange.orientation, calib.tip_offset_flange);
  return point_to_line_distance(p_rcm, tip, shaft_direction(flange, calib));
}

inline SimState initial_state(const SimConfig& cfg) {
  cfg.validate();
  SimState s;
  s.flange = cfg.initial_flange;
  s.flange.orientation.normalize();
  if (shaft_line_deviation(s.flange, cfg.calib, cfg.rcm.p_rcm) > 1e-6) {
    throw Error(Errc::invalid_argument, "initial flange pose does not put the shaft through p_rcm");
  }
  s.instrument = reconstruct_state(s.flange, cfg.calib, cfg.rcm);
  return s;
}

/// Unit vector perpendicular to the initial shaft; the perturbation acts along it.
inline Vec3 perturbation_axis(const SimConfig& cfg) {
  const Vec3 shaft = shaft_direction(cfg.initial_flange, cfg.calib);
  Vec3 axis = cross(shaft, Vec3::UnitX());
  if (axis.norm() < 1e-6) {
    axis = cross(shaft, Vec3::UnitY());
  }
  return axis.normalized();
}

inline Vec3 perturbation_offset(const SimConfig& cfg, double time) {
  if (!cfg.perturbation || cfg.perturbation->amplitude == 0.0) {
    return Vec3::Zero();
  }
  const double phase = 2.0 * std::numbers::pi * cfg.perturbation->frequency * time;
  return cfg.perturbation->amplitude * std::sin(phase) * perturbation_axis(cfg);
}

/// Pose after moving with a constant spatial twist for `dt` seconds (exact
/// SE(3) exponential). `twist.linear` is the velocity of the flange origin.
inline Pose integrate_twist(const Pose& flange, const Twist& twist, double dt) {
  Pose out;
  const double rate = twist.angular.norm();
  if (rate * dt < 1e-15) {
    out.position = flange.position + twist.linear * dt;
    out.orientation = flange.orientation;  // a held pose stays bit-identical
    return out;
  }
  const Rotation dq = exp_rotation(twist.angular * dt);
  {
    // Screw motion about the instantaneous axis; v_base is the velocity of the
    // point at the base origin, scaled by 1 / |omega|.
    const Vec3 axis = twist.angular / rate;
    const Vec3 v_base = (twist.linear - cross(twist.angular, flange.position)) / rate;
    const Vec3 moment = cross(axis, v_base);
    out.position = dq * flange.position + (moment - dq * moment) +
                   axis * axis.dot(v_base) * (rate * dt);
  }
  out.orientation = (dq * flange.orientation).normalized();
  return out;
}

/// Advance the flange by one control period under `twist`.
inline SimState step(const SimState& state, const Twist& twist, const SimConfig& cfg) {
  if (!is_finite(twist.linear) || !is_finite(twist.angular)) {
    throw Error(Errc::invalid_argument, "step: non-finite twist");
  }
  SimState next = state;
  next.tick = state.tick + 1;
  next.time = static_cast<double>(next.tick) * cfg.dt;
  next.flange = integrate_twist(state.flange, twist, cfg.dt);
  if (cfg.perturbation) {
    next.flange.position += perturbation_offset(cfg, next.time) - perturbation_offset(cfg, state.time);
  }
  next.last_twist = twist;
  next.instrument = reconstruct_state(next.flange, cfg.calib, cfg.rcm);
  return next;
}

/// Twist to hold over the coming tick. `solve(instrument, offset)` maps an
/// instrument state and a time offset into the tick to a twist. It is first
/// evaluated at the current state to predict the flange half a tick ahead,
/// then at that midpoint; the midpoint twist is re-expressed at the current
/// flange origin. Holding the start-of-tick twist instead lets combined pivot
/// and insertion walk the shaft off the trocar by O(dt^2) per tick.
template <typename SolveFn>
Twist midpoint_twist(const SimState& state, const SimConfig& cfg, SolveFn&& solve) {
  const double half = 0.5 * cfg.dt;
  const Twist first = solve(state.instrument, 0.0);
  const Pose mid_pose = integrate_twist(state.flange, first, half);
  const InstrumentState mid = reconstruct_state(mid_pose, cfg.calib, cfg.rcm);
  Twist out = solve(mid, half);
  out.linear += cross(out.angular, state.flange.position - mid_pose.position);
  return out;
}

/// Profilers for the four scalar DOFs of each mode plus the bookkeeping that
/// turns script targets into rate commands.
class CommandProfiler {
 public:
  // DOF layout per mode: cartesian (x, y, z, roll), spherical (pitch, yaw, roll, insertion).
  explicit CommandProfiler(const SimConfig& cfg, const Vec3& initial_tip)
      : cfg_(&cfg), initial_tip_(initial_tip) {
    for (auto& s : cart_) s = QuinticSegment::hold(0.0, 0.0);
    for (auto& s : sph_) s = QuinticSegment::hold(0.0, 0.0);
    roll_ = QuinticSegment::hold(0.0, 0.0);
  }

  CommandMode mode() const { return mode_; }

  /// Apply a new target at time `now`. A mode change abandons motion in
  /// flight on the old mode's translational DOFs and restarts from rest.
  void apply(const ScriptEntry& entry, const SimState& state, double now) {
    if (entry.mode != mode_) {
      if (entry.mode == CommandMode::cartesian) {
        const Vec3 offset = state.instrument.p_tip - initial_tip_;
        for (int k = 0; k < 3; ++k) cart_[k] = QuinticSegment::hold(offset[k], now);
      } else {
        for (auto& s : sph_) s = QuinticSegment::hold(s.state_at(now).pos, now);
      }
      mode_ = entry.mode;
    }
    const ProfilerLimits& lin = cfg_->linear_limits;
    const ProfilerLimits& ang = cfg_->angular_limits;
    if (mode_ == CommandMode::cartesian) {
      for (int k = 0; k < 3; ++k) {
        cart_[k] = retarget(cart_[k].state_at(now), entry.values[k], lin, now);
      }
      roll_ = retarget(roll_.state_at(now), entry.values[3], ang, now);
    } else {
      sph_[0] = retarget(sph_[0].state_at(now), entry.values[0], ang, now);
      sph_[1] = retarget(sph_[1].state_at(now), entry.values[1], ang, now);
      roll_ = retarget(roll_.state_at(now), entry.values[2], ang, now);
      sph_[2] = retarget(sph_[2].state_at(now), entry.values[3], lin, now);
    }
  }

  /// Rate command at time `now` in the mode's value layout.
  std::array<double, 4> rates(double now) const {
    if (mode_ == CommandMode::cartesian) {
      return {cart_[0].sample(now).vel, cart_[1].sample(now).vel, cart_[2].sample(now).vel,
              roll_.sample(now).vel};
    }
    if (mode_ == CommandMode::spherical) {
      return {sph_[0].sample(now).vel, sph_[1].sample(now).vel, roll_.sample(now).vel,
              sph_[2].sample(now).vel};
    }
    return {};
  }

 private:
  const SimConfig* cfg_;
  Vec3 initial_tip_;
  CommandMode mode_ = CommandMode::idle;
  std::array<QuinticSegment, 3> cart_;
  std::array<QuinticSegment, 3> sph_;  // pitch, yaw, insertion
  QuinticSegment roll_;                 // shared by both modes
};

inline Twist solve_rates(CommandMode mode, const std::array<double, 4>& v,
                         const InstrumentState& state, const RcmConfig& rcm) {
  switch (mode) {
    case CommandMode::cartesian:
      return solve_cartesian_tip(state, CartesianTipCommand{Vec3(v[0], v[1], v[2]), v[3]}, rcm);
    case CommandMode::spherical:
      return solve_spherical(state, SphericalCommand{v[0], v[1], v[2], v[3]}, rcm);
    case CommandMode::idle:
      break;
  }
  return Twist{};
}

inline EpisodeRow make_row(const SimState& s, CommandMode mode, const std::array<double, 4>& cmd,
                           const Vec3& p_rcm) {
  EpisodeRow row;
  row.time = s.time;
  row.flange = s.flange;
  row.tip = s.instrument.p_tip;
  row.mode = mode;
  row.command = cmd;
  row.twist = s.last_twist;
  row.rcm_target = p_rcm;
  return row;
}

inline EpisodeHeader make_header(const SimConfig& cfg) {
  return EpisodeHeader{kEpisodeSchemaVersion, cfg.dt, config_snapshot_hash(cfg.rcm, cfg.calib)};
}

/// Tick at which an event stamped `time` takes effect.
inline std::uint64_t tick_for_time(double time, double dt) {
  return static_cast<std::uint64_t>(std::ceil(time / dt - 1e-9));
}

/// Deterministic closed-loop run: profiler -> solver -> step at every dt.
/// Recorded commands are the profiler rates at mid-tick, where the solver is evaluated.
/// The record holds the initial state plus one row per tick.
inline EpisodeRecord run_episode(const CommandScript& script, const SimConfig& cfg) {
  EpisodeRecord rec;
  rec.header = make_header(cfg);
  SimState state = initial_state(cfg);
  rec.rows.push_back(make_row(state, CommandMode::idle, {}, cfg.rcm.p_rcm));

  const auto total_ticks = static_cast<std::uint64_t>(std::llround(script.duration() / cfg.dt));
  rec.rows.reserve(total_ticks + 1);
  CommandProfiler profiler(cfg, state.instrument.p_tip);
  std::size_t next_entry = 0;

  for (std::uint64_t k = 0; k < total_ticks; ++k) {
    try {
      while (next_entry < script.entries.size() &&
             tick_for_time(script.entries[next_entry].time, cfg.dt) <= k) {
        profiler.apply(script.entries[next_entry], state, state.time);
        ++next_entry;
      }
      const CommandMode mode = profiler.mode();
      const Twist twist = midpoint_twist(state, cfg, [&](const InstrumentState& at, double offset) {
        return solve_rates(mode, profiler.rates(state.time + offset), at, cfg.rcm);
      });
      const std::array<double, 4> cmd = profiler.rates(state.time + 0.5 * cfg.dt);
      state = step(state, twist, cfg);
      rec.rows.push_back(make_row(state, mode, cmd, cfg.rcm.p_rcm));
    } catch (const Error& e) {
      throw EpisodeError(e, static_cast<std::size_t>(k));
    }
  }
  return rec;
}

}  // namespace rcm
