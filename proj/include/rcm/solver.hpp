#pragma once

#include <cmath>
#include <string>

#include "rcm/errors.hpp"
#include "rcm/geometry.hpp"

namespace rcm {

/// Trocar point and kinematic limits of the constrained instrument.
struct RcmConfig {
  Vec3 p_rcm = Vec3(0.0, 0.0, 0.1);
  double min_insertion = 0.02;     // m, tip distance past the trocar
  double max_insertion = 0.25;     // m
  double max_tip_speed = 0.05;     // m/s (also bounds |v_trans|)
  double max_angular_rate = 1.0;   // rad/s

  void validate() const {
    if (!is_finite(p_rcm)) {
      throw Error(Errc::invalid_argument, "rcm: p_rcm must be finite");
    }
    if (!(min_insertion > 0.0 && min_insertion < max_insertion)) {
      throw Error(Errc::invalid_argument, "rcm: require 0 < min_insertion < max_insertion");
    }
    if (!(max_tip_speed > 0.0 && max_angular_rate > 0.0)) {
      throw Error(Errc::invalid_argument, "rcm: speed limits must be positive");
    }
  }
};

/// Instrument geometry in the flange frame.
///
/// `tip_offset_flange` runs from the flange origin to the instrument tip and
/// `shaft_dir_flange` is the unit shaft axis pointing towards the tip. With a
/// lateral tool-holder offset the shaft line does not pass through the flange
/// origin; the shaft line is always the one through the tip.
struct ShaftCalibration {
  Vec3 tip_offset_flange = Vec3(0.0, 0.0, -0.3);
  Vec3 shaft_dir_flange = Vec3(0.0, 0.0, -1.0);

  void validate() const {
    if (!is_finite(tip_offset_flange) || !is_finite(shaft_dir_flange)) {
      throw Error(Errc::invalid_argument, "calibration: vectors must be finite");
    }
    if (std::abs(shaft_dir_flange.norm() - 1.0) > 1e-9) {
      throw Error(Errc::invalid_argument, "calibration: shaft_dir_flange must be unit length");
    }
    if (std::abs(tip_offset_flange.dot(shaft_dir_flange)) <= 1e-12) {
      throw Error(Errc::invalid_argument,
                  "calibration: tip offset has no component along the shaft direction");
    }
  }
};

/// Geometry of the instrument at one instant (base frame).
///   r_ee    = p_rcm - p_ee
///   r_shaft = p_tip - p_rcm
struct InstrumentState {
  Vec3 p_ee = Vec3::Zero();
  Vec3 p_tip = Vec3::Zero();
  Vec3 r_ee = Vec3::Zero();
  Vec3 r_shaft = Vec3::Zero();

  double insertion() const { return r_shaft.norm(); }
  Vec3 shaft_unit() const { return r_shaft / r_shaft.norm(); }
  Vec3 ee_unit() const { return r_ee / r_ee.norm(); }
};

struct CartesianTipCommand {
  Vec3 v_tip = Vec3::Zero();  // m/s
  double omega_roll = 0.0;    // rad/s about the shaft
};

/// Rates of the spherical parameterization. Pitch and yaw act about the base
/// x and y axes respectively; roll acts about the flange-to-trocar axis.
struct SphericalCommand {
  double omega_pitch = 0.0;
  double omega_yaw = 0.0;
  double omega_roll = 0.0;
  double v_trans = 0.0;  // m/s, positive = deeper insertion
};

inline InstrumentState reconstruct_state(const Pose& flange, const ShaftCalibration& calib,
                                         const RcmConfig& config) {
  InstrumentState s;
  s.p_ee = flange.position;
  s.p_tip = flange.position + rotate(flange.orientation, calib.tip_offset_flange);
  s.r_ee = config.p_rcm - s.p_ee;
  s.r_shaft = s.p_tip - config.p_rcm;
  if (!(s.r_shaft.norm() >= config.min_insertion)) {
    throw Error(Errc::insertion_too_shallow,
                "tip is " + std::to_string(s.r_shaft.norm()) + " m past the trocar, minimum is " +
                    std::to_string(config.min_insertion) + " m");
  }
  return s;
}

inline void check_limits(const CartesianTipCommand& cmd, const RcmConfig& config) {
  if (!is_finite(cmd.v_tip) || !std::isfinite(cmd.omega_roll)) {
    throw Error(Errc::command_limit_exceeded, "non-finite cartesian command");
  }
  if (cmd.v_tip.norm() > config.max_tip_speed) {
    throw Error(Errc::command_limit_exceeded,
                "tip speed " + std::to_string(cmd.v_tip.norm()) + " m/s above limit");
  }
  if (std::abs(cmd.omega_roll) > config.max_angular_rate) {
    throw Error(Errc::command_limit_exceeded, "roll rate above limit");
  }
}

inline void check_limits(const SphericalCommand& cmd, const RcmConfig& config) {
  const double rates[] = {cmd.omega_pitch, cmd.omega_yaw, cmd.omega_roll};
  for (double r : rates) {
    if (!std::isfinite(r)) {
      throw Error(Errc::command_limit_exceeded, "non-finite spherical command");
    }
    if (std::abs(r) > config.max_angular_rate) {
      throw Error(Errc::command_limit_exceeded, "angular rate above limit");
    }
  }
  if (!std::isfinite(cmd.v_trans) || std::abs(cmd.v_trans) > config.max_tip_speed) {
    throw Error(Errc::command_limit_exceeded, "translation speed above limit");
  }
}

/// Flange twist that moves the tip with `cmd.v_tip` and rolls about the shaft
/// while the shaft keeps passing through the trocar point.
inline Twist solve_cartesian_tip(const InstrumentState& state, const CartesianTipCommand& cmd,
                                 const RcmConfig& config) {
  check_limits(cmd, config);
  const double len_sq = state.r_shaft.squaredNorm();
  if (!(std::sqrt(len_sq) >= config.min_insertion)) {
    throw Error(Errc::insertion_too_shallow, "shaft too short to solve pivot");
  }
  const Vec3 shaft_unit = state.r_shaft / std::sqrt(len_sq);

  const Vec3 omega_pivot = cross(state.r_shaft, cmd.v_tip) / len_sq;
  const Vec3 omega_ee = omega_pivot + cmd.omega_roll * shaft_unit;
  const Vec3 v_insertion = cmd.v_tip.dot(shaft_unit) * shaft_unit;

  Twist out;
  out.angular = omega_ee;
  out.linear = v_insertion - cross(omega_ee, state.r_ee);
  return out;
}

inline Twist solve_spherical(const InstrumentState& state, const SphericalCommand& cmd,
                             const RcmConfig& config) {
  check_limits(cmd, config);
  const double ee_len = state.r_ee.norm();
  if (!(ee_len > 0.0)) {
    throw Error(Errc::invalid_argument, "flange coincides with the trocar point");
  }
  const Vec3 ee_unit = state.r_ee / ee_len;

  const Vec3 omega_ee = Vec3(cmd.omega_pitch, cmd.omega_yaw, 0.0) + cmd.omega_roll * ee_unit;

  Twist out;
  out.angular = omega_ee;
  out.linear = cmd.v_trans * ee_unit - cross(omega_ee, state.r_ee);
  return out;
}

/// Express a camera-frame velocity in the instrument robot's base frame.
/// Only the camera orientation matters for a velocity.
inline Vec3 remap_camera_command(const Vec3& cmd_in_camera, const Pose& camera_pose_base) {
  return rotate(camera_pose_base.orientation, cmd_in_camera);
}

/// Velocity of the flange-fixed material point that currently sits on the trocar.
inline Vec3 trocar_point_velocity(const Twist& twist, const InstrumentState& state) {
  return twist.linear + cross(twist.angular, state.r_ee);
}

/// Velocity of the tip when `twist` is applied to the flange as a rigid body.
inline Vec3 tip_velocity(const Twist& twist, const InstrumentState& state) {
  return twist.linear + cross(twist.angular, state.p_tip - state.p_ee);
}

}  // namespace rcm
