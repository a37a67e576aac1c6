#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "rcm/config.hpp"
#include "rcm/simulator.hpp"
#include "rcm/solver.hpp"

namespace rcm::server {

/// A rate command as received from a client, already in the base frame.
struct RateCommand {
  CommandMode mode = CommandMode::cartesian;
  std::array<double, 4> values{};  // same layout as EpisodeRow::command
  double received_at = 0.0;        // server time, s
  std::uint64_t seq = 0;
};

enum class VerdictReason { none, limit_exceeded, workspace, shallow_insertion, stale_command };

inline const char* to_string(VerdictReason r) {
  switch (r) {
    case VerdictReason::none: return "none";
    case VerdictReason::limit_exceeded: return "limit-exceeded";
    case VerdictReason::workspace: return "workspace";
    case VerdictReason::shallow_insertion: return "shallow-insertion";
    case VerdictReason::stale_command: return "stale-command";
  }
  return "none";
}

struct SafetyVerdict {
  bool accepted = true;
  VerdictReason reason = VerdictReason::none;
  std::string detail;

  static SafetyVerdict reject(VerdictReason r, std::string why) { return {false, r, std::move(why)}; }
};

/// Twist the control loop applies for `cmd` over the coming tick.
inline Twist command_twist(const RateCommand& cmd, const SimState& state, const SimConfig& sim) {
  return midpoint_twist(state, sim, [&](const InstrumentState& at, double) {
    return solve_rates(cmd.mode, cmd.values, at, sim.rcm);
  });
}

/// Accept iff the rate limits hold, the command is fresh, and one simulated
/// tick ahead the tip stays inside the workspace box with the insertion
/// inside [min_insertion, max_insertion].
inline SafetyVerdict validate_action(const RateCommand& cmd, const SimState& state, const Config& cfg,
                                     double now) {
  const RcmConfig& rcm = cfg.sim.rcm;
  try {
    if (cmd.mode == CommandMode::cartesian) {
      check_limits(CartesianTipCommand{Vec3(cmd.values[0], cmd.values[1], cmd.values[2]), cmd.values[3]}, rcm);
    } else if (cmd.mode == CommandMode::spherical) {
      check_limits(SphericalCommand{cmd.values[0], cmd.values[1], cmd.values[2], cmd.values[3]}, rcm);
    }
  } catch (const Error& e) {
    return SafetyVerdict::reject(VerdictReason::limit_exceeded, e.what());
  }

  const double age = now - cmd.received_at;
  if (age > cfg.safety.staleness_budget + 1e-12) {
    return SafetyVerdict::reject(VerdictReason::stale_command,
                                 "command is " + std::to_string(age) + " s old");
  }

  SimState predicted;
  try {
    predicted = step(state, command_twist(cmd, state, cfg.sim), cfg.sim);
  } catch (const Error& e) {
    if (e.code() == Errc::insertion_too_shallow) {
      return SafetyVerdict::reject(VerdictReason::shallow_insertion, e.what());
    }
    return SafetyVerdict::reject(VerdictReason::limit_exceeded, e.what());
  }
  const Vec3& tip = predicted.instrument.p_tip;
  if ((tip.array() < cfg.safety.workspace_min.array()).any() ||
      (tip.array() > cfg.safety.workspace_max.array()).any()) {
    return SafetyVerdict::reject(VerdictReason::workspace, "tip would leave the workspace box");
  }
  if (predicted.instrument.insertion() > rcm.max_insertion) {
    return SafetyVerdict::reject(VerdictReason::workspace, "insertion would exceed max_insertion");
  }
  return {};
}

}  // namespace rcm::server
