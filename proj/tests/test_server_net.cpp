#include <fstream>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>
#include <unistd.h>

#include "rcm/server/server.hpp"
#include "support/clients.hpp"

using namespace rcm;
using namespace rcm::server;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

Config net_config(bool test_mode) {
  Config cfg;
  cfg.server.tcp_port = 0;
  cfg.server.ws_port = 0;
  cfg.server.test_mode = test_mode;
  return cfg;
}

json cartesian(double vx, double vy, double vz) {
  return {{"type", "command_cartesian"}, {"v_tip", {vx, vy, vz}}, {"omega_roll", 0.0}};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string temp_path(const std::string& name) {
  return "/tmp/rcm_net_" + std::to_string(getpid()) + "_" + name;
}

/// Commands, steps and a recording through one client; returns the acked step replies.
std::vector<json> scripted_session(client::Base& c, const std::string& record_path) {
  std::vector<json> acks;
  EXPECT_EQ(c.hello("command")["role"], "command");
  c.send({{"type", "start_recording"}});
  c.read_type("ack");
  for (int k = 0; k < 40; ++k) {
    const double a = 0.1 * k;
    if (k % 3 == 0) {
      c.send({{"type", "command_spherical"}, {"omega_pitch", 0.2 * std::sin(a)}, {"omega_yaw", 0.1},
              {"omega_roll", 0.3}, {"v_trans", 0.002 * std::cos(a)}});
    } else {
      c.send(cartesian(0.02 * std::cos(a), 0.02 * std::sin(a), 0.001));
    }
    c.read_type("verdict");
    c.send({{"type", "step"}, {"ticks", 20}});
    acks.push_back(c.read_type("ack"));
  }
  c.send({{"type", "stop_recording"}, {"path", record_path}});
  acks.push_back(c.read_type("ack"));
  return acks;
}

}  // namespace

TEST(Net, TcpSessionStepsAndStreams) {
  ControlServer server(net_config(true));
  server.start();
  client::Tcp c(server.tcp_port());
  const json hello = c.hello("command");
  EXPECT_EQ(hello["role"], "command");
  EXPECT_EQ(hello["test_mode"], true);
  EXPECT_EQ(c.read_type("state")["tick"], 0);
  c.send(cartesian(0.01, 0, 0));
  const json verdict = c.read_type("verdict");
  EXPECT_TRUE(verdict["accepted"].get<bool>());
  EXPECT_EQ(verdict["ref_seq"], 1);
  c.send({{"type", "step"}, {"ticks", 16}});
  const json st = c.read_until([](const json& m) { return m["type"] == "state" && m["tick"] == 16; });
  EXPECT_GT(st["tip"][0].get<double>(), 0.0);
  EXPECT_EQ(c.read_type("ack")["tick"], 16);

  c.send_raw("{oops");
  EXPECT_EQ(c.read_type("error")["code"], "parse_error");
  c.send({{"type", "step"}, {"ticks", 1}});
  EXPECT_EQ(c.read_type("ack")["tick"], 17);
  server.stop();
  EXPECT_EQ(server.ticks(), 17u);
}

TEST(Net, WebSocketSessionAndTcpObserver) {
  ControlServer server(net_config(true));
  server.start();
  client::Ws ws(server.ws_port());
  client::Tcp obs(server.tcp_port());
  EXPECT_EQ(obs.hello("observer")["role"], "observer");
  EXPECT_EQ(ws.hello("command")["role"], "command");
  ws.send({{"type", "command_spherical"}, {"omega_pitch", 0.1}, {"omega_yaw", 0.0}, {"omega_roll", 0.0},
           {"v_trans", 0.0}});
  EXPECT_TRUE(ws.read_type("verdict")["accepted"].get<bool>());
  ws.send({{"type", "step"}, {"ticks", 24}});
  EXPECT_EQ(ws.read_type("ack")["tick"], 24);
  const json seen = obs.read_until([](const json& m) { return m["type"] == "state" && m["tick"] == 24; });
  EXPECT_EQ(seen["mode"], "spherical");
  EXPECT_LE(seen["deviation_mm"].get<double>(), 1e-6);
  ws.close();
  server.stop();
}

TEST(Net, WebSocketOnlyAtWsPath) {
  ControlServer server(net_config(true));
  server.start();
  EXPECT_THROW(client::Ws(server.ws_port(), "/other"), boost::system::system_error);
  client::Ws ok(server.ws_port());
  EXPECT_EQ(ok.hello("observer")["role"], "observer");
  server.stop();
}

TEST(Net, SecondCommandClientRefused) {
  ControlServer server(net_config(true));
  server.start();
  client::Tcp first(server.tcp_port());
  client::Ws second(server.ws_port());
  EXPECT_EQ(first.hello("command")["role"], "command");
  const json refused = second.hello("command");
  EXPECT_EQ(refused["type"], "error");
  EXPECT_EQ(refused["code"], "busy");
  server.stop();
}

TEST(Net, DisconnectRevertsToHold) {
  ControlServer server(net_config(true));
  server.start();
  json before;
  {
    client::Tcp c(server.tcp_port());
    c.hello("command");
    c.send({{"type", "start_recording"}});
    for (int k = 0; k < 10; ++k) {
      c.send(cartesian(0.01, 0.005 * k, 0));
      c.read_type("verdict");
      c.send({{"type", "step"}, {"ticks", 8}});
      before = c.read_until([&](const json& m) { return m["type"] == "state" && m["tick"] == 8 * (k + 1); });
    }
  }
  client::Tcp next(server.tcp_port());
  // the server may still be processing the drop; retry until the slot frees
  json hello;
  for (int attempt = 0; attempt < 50; ++attempt) {
    hello = next.hello("command");
    if (hello["type"] == "hello") break;
    std::this_thread::sleep_for(20ms);
  }
  ASSERT_EQ(hello["type"], "hello");
  next.send({{"type", "step"}, {"ticks", 80}});
  const json after = next.read_until([](const json& m) { return m["type"] == "state" && m["tick"] == 160; });
  EXPECT_EQ(after["flange"], before["flange"]);
  EXPECT_EQ(after["mode"], "idle");
  server.stop();
  EXPECT_EQ(server.core().record().rows.size(), 1u + 160u);
}

TEST(Net, ReplayedSessionsRecordIdenticalEpisodes) {
  std::vector<std::string> files;
  std::vector<std::vector<json>> acks;
  for (int run = 0; run < 3; ++run) {
    ControlServer server(net_config(true));
    server.start();
    const std::string path = temp_path("replay" + std::to_string(run) + ".csv");
    if (run < 2) {
      client::Tcp c(server.tcp_port());
      acks.push_back(scripted_session(c, path));
    } else {
      client::Ws c(server.ws_port());
      acks.push_back(scripted_session(c, path));
    }
    server.stop();
    files.push_back(slurp(path));
    std::remove(path.c_str());
  }
  ASSERT_FALSE(files[0].empty());
  EXPECT_EQ(files[0], files[1]);
  EXPECT_EQ(files[0], files[2]);
  for (auto& a : acks) a.back().erase("path");
  EXPECT_EQ(acks[0], acks[1]);
  EXPECT_EQ(acks.back().back()["rows"], 1 + 40 * 20);
}

TEST(Net, SlowObserverDoesNotStallControlLoop) {
  Config cfg = net_config(false);
  cfg.sim.dt = 0.001;
  cfg.server.stream_hz = 1000.0;
  ServerOptions opts;
  opts.socket_send_buffer = 4096;
  opts.max_queued_snapshots = 8;
  ControlServer server(cfg, opts);
  server.start();

  client::Tcp slow(server.tcp_port(), 2048);
  EXPECT_EQ(slow.hello("observer")["role"], "observer");  // then never read again
  client::Tcp fast(server.tcp_port());
  EXPECT_EQ(fast.hello("observer")["role"], "observer");

  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t ticks0 = server.ticks();
  json latest;
  while (std::chrono::steady_clock::now() - t0 < 1500ms) {
    if (auto m = fast.read(200ms); m && (*m)["type"] == "state") latest = *m;
  }
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::uint64_t ticks = server.ticks() - ticks0;

  EXPECT_GT(server.dropped_snapshots(), 0u);
  EXPECT_GE(static_cast<double>(ticks), 0.8 * elapsed / cfg.sim.dt);
  ASSERT_TRUE(latest.is_object());
  EXPECT_GE(latest["tick"].get<std::uint64_t>() + 200, server.ticks());
  server.stop();
}

TEST(Net, StartFailsOnBusyPort) {
  ControlServer first(net_config(true));
  first.start();
  Config cfg = net_config(true);
  cfg.server.tcp_port = first.tcp_port();
  ControlServer second(cfg);
  try {
    second.start();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::io_failure);
  }
  first.stop();
}
