#pragma once

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rcm/errors.hpp"
#include "rcm/geometry.hpp"
#include "rcm/solver.hpp"

namespace rcm {

enum class CommandMode { idle, cartesian, spherical };

inline const char* to_string(CommandMode mode) {
  switch (mode) {
    case CommandMode::idle: return "idle";
    case CommandMode::cartesian: return "cartesian";
    case CommandMode::spherical: return "spherical";
  }
  return "idle";
}

inline bool parse_mode(std::string_view text, CommandMode& out) {
  if (text == "idle") {
    out = CommandMode::idle;
  } else if (text == "cartesian") {
    out = CommandMode::cartesian;
  } else if (text == "spherical") {
    out = CommandMode::spherical;
  } else {
    return false;
  }
  return true;
}

/// One control tick. The pose fields describe the state at `time`; the
/// command and twist fields are what was applied over the tick that ended at
/// `time` (all zero on the first row).
///
/// command values are (vx, vy, vz, omega_roll) in cartesian mode and
/// (omega_pitch, omega_yaw, omega_roll, v_trans) in spherical mode.
struct EpisodeRow {
  double time = 0.0;
  Pose flange;
  Vec3 tip = Vec3::Zero();
  CommandMode mode = CommandMode::idle;
  std::array<double, 4> command{};
  Twist twist;
  Vec3 rcm_target = Vec3::Zero();
};

inline constexpr int kEpisodeSchemaVersion = 1;

struct EpisodeHeader {
  int schema_version = kEpisodeSchemaVersion;
  double dt = 0.002;
  std::uint64_t config_hash = 0;
};

struct EpisodeRecord {
  EpisodeHeader header;
  std::vector<EpisodeRow> rows;
};

/// 64-bit FNV-1a; stable across platforms, used for the config snapshot hash.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Hash of the trocar configuration and calibration an episode was recorded with.
inline std::uint64_t config_snapshot_hash(const RcmConfig& rcm, const ShaftCalibration& calib) {
  std::string canon;
  const auto put = [&canon](double v) {
    canon += format_double(v);
    canon += ';';
  };
  for (int i = 0; i < 3; ++i) put(rcm.p_rcm[i]);
  put(rcm.min_insertion);
  put(rcm.max_insertion);
  put(rcm.max_tip_speed);
  put(rcm.max_angular_rate);
  for (int i = 0; i < 3; ++i) put(calib.tip_offset_flange[i]);
  for (int i = 0; i < 3; ++i) put(calib.shaft_dir_flange[i]);
  return fnv1a64(canon);
}

inline constexpr std::array<std::string_view, 25> kEpisodeColumns{
    "time_s",    "flange_x",  "flange_y",  "flange_z",  "flange_qw", "flange_qx", "flange_qy",
    "flange_qz", "tip_x",     "tip_y",     "tip_z",     "mode",      "cmd_0",     "cmd_1",
    "cmd_2",     "cmd_3",     "twist_vx",  "twist_vy",  "twist_vz",  "twist_wx",  "twist_wy",
    "twist_wz",  "rcm_x",     "rcm_y",     "rcm_z"};

namespace detail {

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline bool parse_double(std::string_view text, double& out) {
  if (text.empty()) {
    return false;
  }
  std::string buf(text);
  char* end = nullptr;
  errno = 0;
  out = std::strtod(buf.c_str(), &end);
  return end == buf.c_str() + buf.size() && errno != ERANGE;
}

}  // namespace detail

inline void validate_record(const EpisodeRecord& rec) {
  if (rec.rows.empty()) {
    throw Error(Errc::empty_episode, "episode has no rows");
  }
  for (std::size_t i = 0; i < rec.rows.size(); ++i) {
    const EpisodeRow& r = rec.rows[i];
    if (std::abs(r.flange.orientation.norm() - 1.0) > 1e-9) {
      throw MalformedRow(i + 1, "quaternion is not unit norm");
    }
    if (i > 0 && !(r.time > rec.rows[i - 1].time)) {
      throw Error(Errc::non_monotone_time,
                  "time does not increase at row " + std::to_string(i + 1));
    }
  }
}

inline void write_csv(const EpisodeRecord& rec, std::ostream& out) {
  validate_record(rec);
  out << "# rcm_episode schema_version=" << rec.header.schema_version
      << " dt=" << format_double(rec.header.dt)
      << " config_hash=" << detail::hex64(rec.header.config_hash) << '\n';
  for (std::size_t i = 0; i < kEpisodeColumns.size(); ++i) {
    out << (i ? "," : "") << kEpisodeColumns[i];
  }
  out << '\n';
  std::string line;
  for (const EpisodeRow& r : rec.rows) {
    line.clear();
    const auto put = [&line](double v) {
      line += format_double(v);
      line += ',';
    };
    put(r.time);
    for (int k = 0; k < 3; ++k) put(r.flange.position[k]);
    put(r.flange.orientation.w());
    put(r.flange.orientation.x());
    put(r.flange.orientation.y());
    put(r.flange.orientation.z());
    for (int k = 0; k < 3; ++k) put(r.tip[k]);
    line += to_string(r.mode);
    line += ',';
    for (double c : r.command) put(c);
    for (int k = 0; k < 3; ++k) put(r.twist.linear[k]);
    for (int k = 0; k < 3; ++k) put(r.twist.angular[k]);
    for (int k = 0; k < 3; ++k) put(r.rcm_target[k]);
    line.back() = '\n';
    out << line;
  }
}

inline void write_csv(const EpisodeRecord& rec, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(Errc::io_failure, "cannot open '" + path + "' for writing");
  }
  write_csv(rec, out);
  out.flush();
  if (!out) {
    throw Error(Errc::io_failure, "write to '" + path + "' failed");
  }
}

inline std::string to_csv_string(const EpisodeRecord& rec) {
  std::ostringstream out;
  write_csv(rec, out);
  return out.str();
}

inline EpisodeHeader parse_episode_header(std::string_view line) {
  constexpr std::string_view kTag = "# rcm_episode ";
  if (line.substr(0, kTag.size()) != kTag) {
    throw Error(Errc::schema_mismatch, "missing '# rcm_episode' metadata line");
  }
  EpisodeHeader h;
  bool have_version = false;
  bool have_dt = false;
  bool have_hash = false;
  for (std::string_view field : detail::split(line.substr(kTag.size()), ' ')) {
    const auto eq = field.find('=');
    if (eq == std::string_view::npos) {
      continue;
    }
    const std::string_view key = field.substr(0, eq);
    const std::string value(field.substr(eq + 1));
    if (key == "schema_version") {
      have_version = true;
      h.schema_version = std::atoi(value.c_str());
    } else if (key == "dt") {
      have_dt = detail::parse_double(value, h.dt);
    } else if (key == "config_hash") {
      char* end = nullptr;
      h.config_hash = std::strtoull(value.c_str(), &end, 16);
      have_hash = value.size() == 16 && end == value.c_str() + value.size();
    }
  }
  if (!have_version || h.schema_version != kEpisodeSchemaVersion) {
    throw Error(Errc::schema_mismatch,
                "unsupported schema_version (expected " + std::to_string(kEpisodeSchemaVersion) + ")");
  }
  if (!have_dt || !have_hash) {
    throw Error(Errc::schema_mismatch, "metadata line lacks dt or config_hash");
  }
  return h;
}

inline EpisodeRecord read_csv(std::istream& in) {
  EpisodeRecord rec;
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(Errc::schema_mismatch, "empty file");
  }
  rec.header = parse_episode_header(line);
  if (!std::getline(in, line)) {
    throw Error(Errc::schema_mismatch, "missing column header");
  }
  const auto names = detail::split(line, ',');
  if (names.size() != kEpisodeColumns.size() ||
      !std::equal(names.begin(), names.end(), kEpisodeColumns.begin())) {
    throw Error(Errc::schema_mismatch, "column header does not match episode schema");
  }
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    ++row_no;
    const auto cells = detail::split(line, ',');
    if (cells.size() != kEpisodeColumns.size()) {
      throw MalformedRow(row_no, "expected " + std::to_string(kEpisodeColumns.size()) +
                                     " columns, found " + std::to_string(cells.size()));
    }
    std::array<double, 25> v{};
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i == 11) {
        continue;
      }
      if (!detail::parse_double(cells[i], v[i]) || !std::isfinite(v[i])) {
        throw MalformedRow(row_no, "bad number in column " + std::string(kEpisodeColumns[i]));
      }
    }
    EpisodeRow r;
    r.time = v[0];
    r.flange.position = Vec3(v[1], v[2], v[3]);
    r.flange.orientation = Rotation(v[4], v[5], v[6], v[7]);
    r.tip = Vec3(v[8], v[9], v[10]);
    if (!parse_mode(cells[11], r.mode)) {
      throw MalformedRow(row_no, "unknown mode '" + std::string(cells[11]) + "'");
    }
    r.command = {v[12], v[13], v[14], v[15]};
    r.twist.linear = Vec3(v[16], v[17], v[18]);
    r.twist.angular = Vec3(v[19], v[20], v[21]);
    r.rcm_target = Vec3(v[22], v[23], v[24]);
    rec.rows.push_back(r);
  }
  validate_record(rec);
  return rec;
}

inline EpisodeRecord read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::io_failure, "cannot open '" + path + "'");
  }
  try {
    return read_csv(in);
  } catch (const MalformedRow& e) {
    throw MalformedRow(e.row(), path + ": " + e.what());
  }
}

/// Largest disagreement between recorded tip positions and the tip
/// reconstructed from the same row's flange pose.
inline double max_tip_inconsistency(const EpisodeRecord& rec, const ShaftCalibration& calib) {
  double worst = 0.0;
  for (const EpisodeRow& r : rec.rows) {
    const Vec3 tip = r.flange.position + rotate(r.flange.orientation, calib.tip_offset_flange);
    worst = std::max(worst, (tip - r.tip).norm());
  }
  return worst;
}

/// Throws ConfigMismatch when the record was not produced with this calibration.
inline void check_consistency(const EpisodeRecord& rec, const RcmConfig& rcm,
                              const ShaftCalibration& calib) {
  const std::uint64_t expected = config_snapshot_hash(rcm, calib);
  if (rec.header.config_hash != expected) {
    throw Error(Errc::config_mismatch, "episode config_hash " + detail::hex64(rec.header.config_hash) +
                                           " does not match configuration " + detail::hex64(expected));
  }
  if (max_tip_inconsistency(rec, calib) > 1e-9) {
    throw Error(Errc::config_mismatch, "recorded tip positions disagree with the calibration");
  }
}

}  // namespace rcm
