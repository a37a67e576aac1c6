#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rcm/config.hpp"
#include "rcm/server/safety.hpp"
#include "rcm/simulator.hpp"
#include "rcm/trajectory_io.hpp"

namespace rcm::server {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::uint64_t kMaxStepTicks = 1'000'000;

using ConnectionId = std::uint64_t;
using nlohmann::json;

enum class Role { none, observer, command };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::none: return "none";
    case Role::observer: return "observer";
    case Role::command: return "command";
  }
  return "none";
}

/// One serialized message for one connection. Droppable messages are state
/// snapshots, which a slow consumer may lose.
struct Outgoing {
  ConnectionId to = 0;
  std::string text;
  bool droppable = false;
};

struct CoreOptions {
  bool record_from_start = false;
};

/// Single-owner control loop state: simulator, safety gate, sessions and
/// recording. Not thread safe; the network layer feeds it from one thread.
class ControlCore {
 public:
  explicit ControlCore(Config cfg, CoreOptions opts = {})
      : cfg_(std::move(cfg)), state_(initial_state(cfg_.sim)) {
    const double per_snapshot = 1.0 / (cfg_.server.stream_hz * cfg_.sim.dt);
    snapshot_every_ = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(per_snapshot)));
    if (opts.record_from_start) {
      begin_recording();
    }
  }

  const Config& config() const { return cfg_; }
  const SimState& state() const { return state_; }
  double now() const { return state_.time; }
  bool test_mode() const { return cfg_.server.test_mode; }
  bool clutch_engaged() const { return clutch_; }
  bool recording() const { return recording_; }
  const EpisodeRecord& record() const { return record_; }
  std::optional<ConnectionId> command_client() const { return command_client_; }
  const std::optional<RateCommand>& active_command() const { return active_; }
  std::uint64_t snapshot_every() const { return snapshot_every_; }
  std::size_t connection_count() const { return conns_.size(); }

  void on_connect(ConnectionId id) { conns_[id] = Session{}; }

  void on_disconnect(ConnectionId id) {
    conns_.erase(id);
    if (command_client_ == id) {
      command_client_.reset();
      active_.reset();  // zero-command hold
    }
  }

  void on_message(ConnectionId id, std::string_view text) {
    auto it = conns_.find(id);
    if (it == conns_.end()) {
      return;
    }
    json msg;
    try {
      msg = json::parse(text);
    } catch (const json::exception& e) {
      send_error(id, "parse_error", e.what(), std::nullopt);
      return;
    }
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
      send_error(id, "bad_message", "message must be an object with a string 'type'", std::nullopt);
      return;
    }
    if (!msg.contains("seq") || !msg["seq"].is_number_unsigned()) {
      send_error(id, "bad_seq", "message needs a non-negative integer 'seq'", std::nullopt);
      return;
    }
    const auto seq = msg["seq"].get<std::uint64_t>();
    Session& session = it->second;
    if (session.last_in_seq && seq <= *session.last_in_seq) {
      send_error(id, "bad_seq", "seq must strictly increase per connection", seq);
      return;
    }
    session.last_in_seq = seq;

    const std::string type = msg["type"].get<std::string>();
    try {
      dispatch(id, session, type, msg, seq);
    } catch (const json::exception& e) {
      send_error(id, "bad_field", e.what(), seq);
    } catch (const Error& e) {
      send_error(id, to_string(e.code()), e.what(), seq);
    }
  }

  /// Advance the simulator by one control period.
  void tick() {
    Twist twist;
    CommandMode mode = CommandMode::idle;
    std::array<double, 4> cmd{};
    if (active_ && clutch_) {
      const SafetyVerdict v = validate_action(*active_, state_, cfg_, now());
      if (v.accepted) {
        twist = command_twist(*active_, state_, cfg_.sim);
        mode = active_->mode;
        cmd = active_->values;
      } else {
        if (command_client_) {
          send_verdict(*command_client_, v, active_->seq);
        }
        active_.reset();
      }
    }
    try {
      state_ = step(state_, twist, cfg_.sim);
    } catch (const Error& e) {
      // Only a disturbance can get here; hold still instead.
      active_.reset();
      mode = CommandMode::idle;
      cmd = {};
      state_ = step(state_, Twist{}, cfg_.sim);
      broadcast_error("step_failed", e.what());
    }
    last_mode_ = mode;
    last_cmd_ = cmd;
    if (recording_) {
      record_.rows.push_back(make_row(state_, mode, cmd, cfg_.sim.rcm.p_rcm));
    }
    if (state_.tick % snapshot_every_ == 0) {
      broadcast_snapshot();
    }
  }

  std::vector<Outgoing> take_outbox() {
    std::vector<Outgoing> out;
    out.swap(outbox_);
    return out;
  }

  json snapshot_json() const {
    const Pose& f = state_.flange;
    const Rotation& q = f.orientation;
    const auto vec = [](const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); };
    return json{
        {"type", "state"},
        {"tick", state_.tick},
        {"time", state_.time},
        {"flange", {{"position", vec(f.position)}, {"orientation_wxyz", {q.w(), q.x(), q.y(), q.z()}}}},
        {"tip", vec(state_.instrument.p_tip)},
        {"shaft_dir", vec(shaft_direction(f, cfg_.sim.calib))},
        {"rcm", vec(cfg_.sim.rcm.p_rcm)},
        {"insertion", state_.instrument.insertion()},
        {"deviation_mm", 1000.0 * shaft_line_deviation(f, cfg_.sim.calib, cfg_.sim.rcm.p_rcm)},
        {"mode", to_string(last_mode_)},
        {"command", last_cmd_},
        {"twist", {{"linear", vec(state_.last_twist.linear)}, {"angular", vec(state_.last_twist.angular)}}},
        {"clutch", clutch_},
        {"recording", recording_},
    };
  }

 private:
  struct Session {
    Role role = Role::none;
    std::optional<std::uint64_t> last_in_seq;
    std::uint64_t out_seq = 0;
    bool camera_frame = false;
  };

  void dispatch(ConnectionId id, Session& session, const std::string& type, const json& msg,
                std::uint64_t seq) {
    if (type == "hello") {
      handle_hello(id, session, msg, seq);
      return;
    }
    if (type == "state" || type == "verdict" || type == "error" || type == "ack") {
      send_error(id, "unexpected_type", "'" + type + "' is sent by the server only", seq);
      return;
    }
    static const char* const kClientTypes[] = {"configure", "command_cartesian", "command_spherical",
                                               "clutch", "start_recording", "stop_recording", "step"};
    if (std::find(std::begin(kClientTypes), std::end(kClientTypes), type) == std::end(kClientTypes)) {
      send_error(id, "unknown_type", "unknown message type '" + type + "'", seq);
      return;
    }
    if (session.role == Role::none) {
      send_error(id, "hello_required", "send hello first", seq);
      return;
    }
    if (session.role != Role::command) {
      send_error(id, "not_command_client", "observers cannot send '" + type + "'", seq);
      return;
    }

    if (type == "configure") {
      if (msg.contains("camera_frame")) {
        session.camera_frame = msg["camera_frame"].get<bool>();
      }
      send_ack(id, seq, {{"camera_frame", session.camera_frame}});
    } else if (type == "command_cartesian" || type == "command_spherical") {
      handle_command(id, session, type, msg, seq);
    } else if (type == "clutch") {
      clutch_ = msg.at("engaged").get<bool>();
      if (!clutch_) {
        active_.reset();
      }
      send_ack(id, seq, {{"engaged", clutch_}});
    } else if (type == "start_recording") {
      begin_recording();
      send_ack(id, seq, {{"recording", true}});
    } else if (type == "stop_recording") {
      handle_stop_recording(id, msg, seq);
    } else if (type == "step") {
      if (!test_mode()) {
        send_error(id, "not_test_mode", "step is only available in test mode", seq);
        return;
      }
      const auto ticks = msg.value("ticks", std::uint64_t{1});
      if (ticks > kMaxStepTicks) {
        send_error(id, "bad_field", "ticks above " + std::to_string(kMaxStepTicks), seq);
        return;
      }
      for (std::uint64_t k = 0; k < ticks; ++k) {
        tick();
      }
      send_ack(id, seq, {{"tick", state_.tick}, {"time", state_.time}});
    }
  }

  void handle_hello(ConnectionId id, Session& session, const json& msg, std::uint64_t seq) {
    const int version = msg.value("schema_version", -1);
    if (version != kProtocolVersion) {
      send_error(id, "schema_mismatch",
                 "server speaks schema_version " + std::to_string(kProtocolVersion), seq);
      return;
    }
    const std::string role = msg.value("role", std::string("observer"));
    if (role == "command") {
      if (command_client_ && *command_client_ != id) {
        send_error(id, "busy", "another command client is connected", seq);
        return;
      }
      command_client_ = id;
      session.role = Role::command;
    } else if (role == "observer") {
      if (command_client_ == id) {
        command_client_.reset();
        active_.reset();
      }
      session.role = Role::observer;
    } else {
      send_error(id, "bad_field", "role must be 'command' or 'observer'", seq);
      return;
    }
    const auto vec = [](const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); };
    json reply{
        {"type", "hello"},
        {"ref_seq", seq},
        {"schema_version", kProtocolVersion},
        {"role", to_string(session.role)},
        {"dt", cfg_.sim.dt},
        {"test_mode", test_mode()},
        {"snapshot_every_ticks", snapshot_every_},
        {"config", config_to_json(cfg_)},
        {"workspace", {{"min", vec(cfg_.safety.workspace_min)}, {"max", vec(cfg_.safety.workspace_max)}}},
    };
    send(id, std::move(reply), false);
    json snap = snapshot_json();
    send(id, std::move(snap), false);
  }

  void handle_command(ConnectionId id, const Session& session, const std::string& type, const json& msg,
                      std::uint64_t seq) {
    if (!clutch_) {
      send_error(id, "clutch_open", "clutch is disengaged; command ignored", seq);
      return;
    }
    RateCommand cmd;
    cmd.seq = seq;
    cmd.received_at = now();
    if (type == "command_cartesian") {
      const auto& v = msg.at("v_tip");
      if (!v.is_array() || v.size() != 3) {
        throw Error(Errc::invalid_argument, "v_tip must be [x, y, z]");
      }
      Vec3 v_tip(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
      if (session.camera_frame) {
        v_tip = remap_camera_command(v_tip, cfg_.server.camera_pose);
      }
      cmd.mode = CommandMode::cartesian;
      cmd.values = {v_tip.x(), v_tip.y(), v_tip.z(), msg.value("omega_roll", 0.0)};
    } else {
      cmd.mode = CommandMode::spherical;
      cmd.values = {msg.value("omega_pitch", 0.0), msg.value("omega_yaw", 0.0), msg.value("omega_roll", 0.0),
                    msg.value("v_trans", 0.0)};
    }
    const SafetyVerdict v = validate_action(cmd, state_, cfg_, now());
    if (v.accepted) {
      active_ = cmd;
    }
    send_verdict(id, v, seq);
  }

  void handle_stop_recording(ConnectionId id, const json& msg, std::uint64_t seq) {
    if (!recording_) {
      send_error(id, "not_recording", "no recording in progress", seq);
      return;
    }
    recording_ = false;
    json extra{{"recording", false}, {"rows", record_.rows.size()}};
    if (msg.contains("path")) {
      const std::string path = msg["path"].get<std::string>();
      write_csv(record_, path);
      extra["path"] = path;
    }
    send_ack(id, seq, std::move(extra));
  }

  void begin_recording() {
    recording_ = true;
    record_ = EpisodeRecord{};
    record_.header = make_header(cfg_.sim);
    record_.rows.push_back(make_row(state_, last_mode_, last_cmd_, cfg_.sim.rcm.p_rcm));
  }

  void send(ConnectionId id, json msg, bool droppable) {
    auto it = conns_.find(id);
    if (it == conns_.end()) {
      return;
    }
    msg["seq"] = it->second.out_seq++;
    outbox_.push_back(Outgoing{id, msg.dump(), droppable});
  }

  void send_ack(ConnectionId id, std::uint64_t ref_seq, json extra) {
    json msg{{"type", "ack"}, {"ref_seq", ref_seq}};
    msg.update(extra);
    send(id, std::move(msg), false);
  }

  void send_verdict(ConnectionId id, const SafetyVerdict& v, std::uint64_t ref_seq) {
    json msg{{"type", "verdict"}, {"ref_seq", ref_seq}, {"accepted", v.accepted}};
    msg["reason"] = v.accepted ? json(nullptr) : json(to_string(v.reason));
    if (!v.detail.empty()) {
      msg["detail"] = v.detail;
    }
    send(id, std::move(msg), false);
  }

  void send_error(ConnectionId id, const std::string& code, const std::string& message,
                  std::optional<std::uint64_t> ref_seq) {
    json msg{{"type", "error"}, {"code", code}, {"message", message}};
    msg["ref_seq"] = ref_seq ? json(*ref_seq) : json(nullptr);
    send(id, std::move(msg), false);
  }

  void broadcast_error(const std::string& code, const std::string& message) {
    for (const auto& [id, s] : conns_) {
      if (s.role != Role::none) {
        send_error(id, code, message, std::nullopt);
      }
    }
  }

  void broadcast_snapshot() {
    bool any = false;
    for (const auto& [id, s] : conns_) {
      any = any || s.role != Role::none;
    }
    if (!any) {
      return;
    }
    const json snap = snapshot_json();
    for (const auto& [id, s] : conns_) {
      if (s.role != Role::none) {
        send(id, snap, true);
      }
    }
  }

  Config cfg_;
  SimState state_;
  std::uint64_t snapshot_every_ = 1;
  std::map<ConnectionId, Session> conns_;
  std::optional<ConnectionId> command_client_;
  std::optional<RateCommand> active_;
  bool clutch_ = true;
  CommandMode last_mode_ = CommandMode::idle;
  std::array<double, 4> last_cmd_{};
  bool recording_ = false;
  EpisodeRecord record_;
  std::vector<Outgoing> outbox_;
};

}  // namespace rcm::server
