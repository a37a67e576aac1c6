#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rcm/errors.hpp"
#include "rcm/trajectory_io.hpp"

namespace rcm {

/// A target change at `time`. Values are targets, not rates:
///   cartesian: tip offset from the episode's initial tip (dx, dy, dz in m), roll angle (rad)
///   spherical: pitch, yaw, roll angles (rad), insertion offset (m)
/// Angles and the insertion offset are accumulated from zero at episode start.
struct ScriptEntry {
  double time = 0.0;
  CommandMode mode = CommandMode::cartesian;
  std::array<double, 4> values{};
};

struct CommandScript {
  std::vector<ScriptEntry> entries;
  /// Episode length; when absent the episode ends at the last entry's time.
  std::optional<double> end_time;

  double duration() const {
    if (end_time) {
      return *end_time;
    }
    return entries.empty() ? 0.0 : entries.back().time;
  }
};

/// Parse the line-oriented script format:
///
///     # comment
///     <time_s> cartesian <dx> <dy> <dz> <roll>
///     <time_s> spherical <pitch> <yaw> <roll> <insertion>
///     <time_s> end
///
/// Times must strictly increase. Errors name the 1-based line number.
inline CommandScript parse_script(std::istream& in) {
  CommandScript script;
  std::string raw;
  std::size_t line_no = 0;
  double last_time = -1.0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    std::istringstream line(hash == std::string::npos ? raw : raw.substr(0, hash));
    std::string time_text;
    if (!(line >> time_text)) {
      continue;
    }
    const auto fail = [line_no](const std::string& why) {
      return Error(Errc::parse_error, "script line " + std::to_string(line_no) + ": " + why);
    };
    if (script.end_time) {
      throw fail("entries after 'end'");
    }
    double time = 0.0;
    if (!detail::parse_double(time_text, time) || !std::isfinite(time) || time < 0.0) {
      throw fail("bad time '" + time_text + "'");
    }
    if (time <= last_time) {
      throw fail("time " + time_text + " does not increase");
    }
    last_time = time;
    std::string mode_text;
    if (!(line >> mode_text)) {
      throw fail("missing mode");
    }
    if (mode_text == "end") {
      script.end_time = time;
    } else {
      ScriptEntry e;
      e.time = time;
      if (!parse_mode(mode_text, e.mode) || e.mode == CommandMode::idle) {
        throw fail("unknown mode '" + mode_text + "'");
      }
      for (double& v : e.values) {
        std::string tok;
        if (!(line >> tok) || !detail::parse_double(tok, v) || !std::isfinite(v)) {
          throw fail("expected four numeric values");
        }
      }
      script.entries.push_back(e);
    }
    std::string extra;
    if (line >> extra) {
      throw fail("unexpected trailing token '" + extra + "'");
    }
  }
  return script;
}

inline CommandScript parse_script_string(const std::string& text) {
  std::istringstream in(text);
  return parse_script(in);
}

inline CommandScript load_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::io_failure, "cannot open script '" + path + "'");
  }
  return parse_script(in);
}

}  // namespace rcm
