#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "rcm/errors.hpp"

namespace rcm {

/// Position / velocity / acceleration of one scalar degree of freedom.
struct KinematicState {
  double pos = 0.0;
  double vel = 0.0;
  double acc = 0.0;
};

struct ProfileSample {
  double pos = 0.0;
  double vel = 0.0;
  double acc = 0.0;
  double jerk = 0.0;
};

struct ProfilerLimits {
  double max_accel = 1.0;
  double max_jerk = 10.0;
  double base_duration = 0.5;  // s, starting duration before extension

  void validate() const {
    if (!(max_accel > 0.0 && max_jerk > 0.0 && base_duration > 0.0) ||
        !std::isfinite(max_accel) || !std::isfinite(max_jerk) || !std::isfinite(base_duration)) {
      throw Error(Errc::invalid_argument, "profiler limits must be positive and finite");
    }
  }
};

/// Quintic polynomial from a start state to a target at rest, in local time
/// tau = t - start_time in [0, duration]. Immutable once built.
class QuinticSegment {
 public:
  QuinticSegment() = default;

  QuinticSegment(const KinematicState& start, double target, double start_time, double duration)
      : start_time_(start_time), duration_(duration), start_(start), end_{target, 0.0, 0.0} {
    const double T = duration;
    const double T2 = T * T;
    const double T3 = T2 * T;
    const double delta = target - start.pos;
    c_[0] = start.pos;
    c_[1] = start.vel;
    c_[2] = 0.5 * start.acc;
    c_[3] = (20.0 * delta - 12.0 * start.vel * T - 3.0 * start.acc * T2) / (2.0 * T3);
    c_[4] = (-30.0 * delta + 16.0 * start.vel * T + 3.0 * start.acc * T2) / (2.0 * T3 * T);
    c_[5] = (12.0 * delta - 6.0 * start.vel * T - start.acc * T2) / (2.0 * T3 * T2);
  }

  /// A segment that sits at `pos` forever.
  static QuinticSegment hold(double pos, double start_time) {
    return QuinticSegment(KinematicState{pos, 0.0, 0.0}, pos, start_time, 1.0);
  }

  /// Exact polynomial derivatives; times past the end return the target at rest.
  ProfileSample sample(double t) const {
    double tau = t - start_time_;
    if (tau >= duration_) {
      return ProfileSample{end_.pos, 0.0, 0.0, 0.0};
    }
    tau = std::max(tau, 0.0);
    return sample_local(tau);
  }

  ProfileSample sample_local(double tau) const {
    const auto& c = c_;
    ProfileSample s;
    s.pos = c[0] + tau * (c[1] + tau * (c[2] + tau * (c[3] + tau * (c[4] + tau * c[5]))));
    s.vel = c[1] + tau * (2.0 * c[2] + tau * (3.0 * c[3] + tau * (4.0 * c[4] + tau * 5.0 * c[5])));
    s.acc = 2.0 * c[2] + tau * (6.0 * c[3] + tau * (12.0 * c[4] + tau * 20.0 * c[5]));
    s.jerk = 6.0 * c[3] + tau * (24.0 * c[4] + tau * 60.0 * c[5]);
    return s;
  }

  KinematicState state_at(double t) const {
    const ProfileSample s = sample(t);
    return {s.pos, s.vel, s.acc};
  }

  /// Largest |acceleration| and |jerk| over the whole segment. Jerk is a
  /// quadratic and acceleration a cubic in tau, so both extrema lie on the
  /// endpoints, the jerk vertex, or the jerk roots.
  std::pair<double, double> peak_accel_jerk() const {
    const double T = duration_;
    std::array<double, 5> candidates{0.0, T, -1.0, -1.0, -1.0};
    const double a = 60.0 * c_[5];
    const double b = 24.0 * c_[4];
    const double c = 6.0 * c_[3];
    if (a != 0.0) {
      candidates[2] = -b / (2.0 * a);
      const double disc = b * b - 4.0 * a * c;
      if (disc >= 0.0) {
        const double root = std::sqrt(disc);
        candidates[3] = (-b + root) / (2.0 * a);
        candidates[4] = (-b - root) / (2.0 * a);
      }
    } else if (b != 0.0) {
      candidates[3] = -c / b;
    }
    double peak_acc = 0.0;
    double peak_jerk = 0.0;
    for (double tau : candidates) {
      if (tau < 0.0 || tau > T) {
        continue;
      }
      const ProfileSample s = sample_local(tau);
      peak_acc = std::max(peak_acc, std::abs(s.acc));
      peak_jerk = std::max(peak_jerk, std::abs(s.jerk));
    }
    return {peak_acc, peak_jerk};
  }

  double start_time() const { return start_time_; }
  double duration() const { return duration_; }
  double end_time() const { return start_time_ + duration_; }
  const KinematicState& start_state() const { return start_; }
  const KinematicState& target_state() const { return end_; }
  const std::array<double, 6>& coefficients() const { return c_; }

 private:
  std::array<double, 6> c_{};
  double start_time_ = 0.0;
  double duration_ = 1.0;
  KinematicState start_{};
  KinematicState end_{};
};

inline constexpr double kDurationGrowth = 1.1;
inline constexpr int kMaxDurationExtensions = 100;

/// Plan from `current` to `target_pos` (arriving at rest). Starts at the base
/// duration and stretches it by 10% until the acceleration and jerk limits hold.
inline QuinticSegment retarget(const KinematicState& current, double target_pos,
                               const ProfilerLimits& limits, double now) {
  if (!std::isfinite(current.pos) || !std::isfinite(current.vel) || !std::isfinite(current.acc) ||
      !std::isfinite(target_pos) || !std::isfinite(now)) {
    throw Error(Errc::invalid_argument, "retarget: non-finite input");
  }
  double duration = limits.base_duration;
  for (int i = 0; i <= kMaxDurationExtensions; ++i) {
    QuinticSegment seg(current, target_pos, now, duration);
    const auto [peak_acc, peak_jerk] = seg.peak_accel_jerk();
    if (peak_acc <= limits.max_accel && peak_jerk <= limits.max_jerk) {
      return seg;
    }
    duration *= kDurationGrowth;
  }
  throw Error(Errc::duration_cap_reached,
              "limits still violated after " + std::to_string(kMaxDurationExtensions) +
                  " duration extensions");
}

}  // namespace rcm
