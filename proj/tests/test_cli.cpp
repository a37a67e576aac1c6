#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>

#include "support/clients.hpp"
#include "support/oracles.hpp"

using nlohmann::json;
using namespace std::chrono_literals;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string temp_path(const std::string& name) {
  return "/tmp/rcm_cli_" + std::to_string(getpid()) + "_" + name;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

Outcome rcmctl(const std::string& args) {
  const std::string out = temp_path("stdout"), err = temp_path("stderr");
  const std::string cmd = std::string(RCMCTL_PATH) + " " + args + " >" + out + " 2>" + err;
  const int status = std::system(cmd.c_str());
  Outcome r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  std::remove(out.c_str());
  std::remove(err.c_str());
  return r;
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

/// Parses the summary table into column -> value for its single data row.
std::map<std::string, std::string> table_row(const std::string& csv) {
  std::istringstream in(csv);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  std::map<std::string, std::string> out;
  std::istringstream h(header), r(row);
  std::string key, value;
  while (std::getline(h, key, ',') && std::getline(r, value, ',')) out[key] = value;
  return out;
}

const std::string kPivotScript =
    "# single pivot, then hold\n0.5 cartesian 0.01 0 0 0\n3 cartesian 0 0.005 0 0.2\n60 end\n";

}  // namespace

TEST(Cli, SimulateRowCountAndDeterminism) {
  const std::string script = temp_path("pivot.txt");
  write_file(script, kPivotScript);
  const Outcome a = rcmctl("simulate " + script);
  const Outcome b = rcmctl("simulate " + script);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(count_lines(a.out), 30001u + 2u);  // metadata and column header
  EXPECT_EQ(a.out, b.out);
  const std::string file = temp_path("pivot.csv");
  const Outcome c = rcmctl("simulate " + script + " --out " + file);
  ASSERT_EQ(c.code, 0);
  EXPECT_EQ(slurp(file), a.out);
  std::remove(file.c_str());
  std::remove(script.c_str());
}

TEST(Cli, SimulateDtOverride) {
  const std::string script = temp_path("short.txt");
  write_file(script, "0 cartesian 0.01 0 0 0\n2 end\n");
  const Outcome r = rcmctl("simulate " + script + " --dt 0.004");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(r.out), 501u + 2u);
  EXPECT_NE(r.out.find("dt=0.004"), std::string::npos);
  std::remove(script.c_str());
}

TEST(Cli, BadScriptOrderNamesLine) {
  const std::string script = temp_path("bad.txt");
  write_file(script, "1 cartesian 0.01 0 0 0\n# comment\n0.5 cartesian 0 0 0 0\n2 end\n");
  const Outcome r = rcmctl("simulate " + script);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
  EXPECT_TRUE(r.out.empty());
  std::remove(script.c_str());
}

TEST(Cli, RuntimeFailureExitsThree) {
  const std::string script = temp_path("retract.txt");
  write_file(script, "0 spherical 0 0 0 -0.085\n10 end\n");
  const Outcome r = rcmctl("simulate " + script);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("InsertionTooShallow"), std::string::npos) << r.err;
  std::remove(script.c_str());
}

TEST(Cli, MetricsOnUnperturbedEpisode) {
  const std::string script = temp_path("m.txt"), csv = temp_path("m.csv"), table = temp_path("m_table.csv");
  write_file(script, oracle::script_text(oracle::mixed_script(20.0)));
  ASSERT_EQ(rcmctl("simulate " + script + " -o " + csv).code, 0);
  const Outcome r = rcmctl("metrics " + csv + " --out " + table);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("rcm_deviation_mm"), std::string::npos);
  EXPECT_NE(r.out.find("cutoff_hz 10"), std::string::npos);
  const auto row = table_row(slurp(table));
  EXPECT_LE(std::stod(row.at("dev_max_mm")), 1e-3);
  EXPECT_EQ(row.at("rows"), "10001");
  EXPECT_EQ(row.at("metric_rate_hz"), "5");
  EXPECT_EQ(row.at("metric_samples"), "101");
  EXPECT_LE(std::stod(row.at("sparc")), 0.0);
  EXPECT_EQ(row.at("sparc_amp_threshold"), "0.05");
  EXPECT_EQ(row.at("sparc_padding_level"), "4");

  const Outcome raw = rcmctl("metrics " + csv + " --raw-rate-metrics --out " + table);
  ASSERT_EQ(raw.code, 0);
  EXPECT_EQ(table_row(slurp(table)).at("metric_samples"), "10001");
  for (const auto& p : {script, csv, table}) std::remove(p.c_str());
}

TEST(Cli, MetricsOnPerturbedEpisodeMatchesBruteForce) {
  const std::string cfg = temp_path("pert.json"), script = temp_path("p.txt"), csv = temp_path("p.csv"),
                    table = temp_path("p_table.csv"), series = temp_path("p_series.csv");
  write_file(cfg, R"({"simulation": {"perturbation": {"amplitude": 5e-5, "frequency": 0.5}}})");
  write_file(script, "20 end\n");
  ASSERT_EQ(rcmctl("simulate " + script + " --config " + cfg + " -o " + csv).code, 0);
  const Outcome r = rcmctl("metrics " + csv + " --config " + cfg + " --out " + table + " --series-out " + series);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto row = table_row(slurp(table));
  const double median = std::stod(row.at("dev_median_mm"));
  EXPECT_GE(median, 0.02);
  EXPECT_LE(median, 0.05);

  // brute force from the recorded flange columns (time_s, flange_x..z, flange_qw..qz, ...)
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::vector<double> dev;
  while (std::getline(in, line)) {
    std::vector<double> f;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      try {
        f.push_back(std::stod(cell));
      } catch (...) {
        f.push_back(0.0);
      }
    }
    const rcm::Vec3 pos(f[1], f[2], f[3]);
    const Eigen::Quaterniond q(f[4], f[5], f[6], f[7]);
    const rcm::Vec3 tip = pos + q.toRotationMatrix() * rcm::Vec3(0, 0, -0.3);
    const rcm::Vec3 dir = q.toRotationMatrix() * rcm::Vec3(0, 0, -1);
    dev.push_back(1000.0 * oracle::line_distance(rcm::Vec3(0, 0, 0.1), tip, dir));
  }
  ASSERT_EQ(dev.size(), 10001u);
  std::sort(dev.begin(), dev.end());
  EXPECT_NEAR(median, dev[dev.size() / 2], 1e-8);
  EXPECT_NEAR(std::stod(row.at("dev_max_mm")), dev.back(), 1e-8);
  EXPECT_EQ(count_lines(slurp(series)), 1u + 10001u);
  for (const auto& p : {cfg, script, csv, table, series}) std::remove(p.c_str());
}

TEST(Cli, MetricsConfigMismatchIsValidationError) {
  const std::string cfg = temp_path("other.json"), script = temp_path("c.txt"), csv = temp_path("c.csv");
  write_file(cfg, R"({"rcm": {"p_rcm": [0, 0, 0.12]}})");
  write_file(script, "5 end\n");
  ASSERT_EQ(rcmctl("simulate " + script + " -o " + csv).code, 0);
  const Outcome r = rcmctl("metrics " + csv + " --config " + cfg);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("ConfigMismatch"), std::string::npos) << r.err;
  for (const auto& p : {cfg, script, csv}) std::remove(p.c_str());
}

TEST(Cli, TooShortEpisodeSurfacesSeriesTooShort) {
  const std::string script = temp_path("s.txt"), csv = temp_path("s.csv");
  write_file(script, "0 cartesian 0.001 0 0 0\n0.5 end\n");
  ASSERT_EQ(rcmctl("simulate " + script + " -o " + csv).code, 0);
  const Outcome r = rcmctl("metrics " + csv);
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("SeriesTooShort"), std::string::npos) << r.err;
  for (const auto& p : {script, csv}) std::remove(p.c_str());
}

TEST(Cli, MalformedEpisodeIsValidationError) {
  const std::string csv = temp_path("broken.csv");
  write_file(csv, "not,an,episode\n");
  const Outcome r = rcmctl("metrics " + csv);
  EXPECT_EQ(r.code, 2);
  std::remove(csv.c_str());
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(rcmctl("").code, 1);
  EXPECT_EQ(rcmctl("simulate").code, 1);
  EXPECT_EQ(rcmctl("simulate /nonexistent/script.txt").code, 1);
  EXPECT_EQ(rcmctl("frobnicate").code, 1);
  EXPECT_EQ(rcmctl("metrics --fs").code, 1);
  EXPECT_EQ(rcmctl("--help").code, 0);
}

TEST(Cli, ServeTestModeSessionAndRecord) {
  const std::string log = temp_path("serve.log"), record = temp_path("serve.csv");
  const pid_t pid = fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    std::freopen(log.c_str(), "w", stderr);
    execl(RCMCTL_PATH, "rcmctl", "serve", "--test-mode", "--tcp-port", "0", "--ws-port", "0", "--record",
          record.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  std::smatch m;
  const std::regex ports(R"(tcp 127\.0\.0\.1:(\d+)\s+ws ws://127\.0\.0\.1:(\d+)/ws)");
  std::string text;
  for (int i = 0; i < 200 && !std::regex_search(text, m, ports); ++i) {
    std::this_thread::sleep_for(10ms);
    text = slurp(log);
  }
  ASSERT_TRUE(std::regex_search(text, m, ports)) << text;
  const auto tcp_port = static_cast<unsigned short>(std::stoi(m[1]));
  const auto ws_port = static_cast<unsigned short>(std::stoi(m[2]));
  {
    client::Tcp c(tcp_port);
    EXPECT_EQ(c.hello("command")["test_mode"], true);
    client::Ws w(ws_port);
    EXPECT_EQ(w.hello("observer")["role"], "observer");
    c.send({{"type", "command_cartesian"}, {"v_tip", {0.01, 0, 0}}, {"omega_roll", 0}});
    EXPECT_TRUE(c.read_type("verdict")["accepted"].get<bool>());
    c.send({{"type", "step"}, {"ticks", 40}});
    EXPECT_EQ(c.read_type("ack")["tick"], 40);
    EXPECT_EQ(w.read_until([](const json& s) { return s["type"] == "state" && s["tick"] == 40; })["mode"],
              "cartesian");
  }
  kill(pid, SIGINT);
  int status = 0;
  waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  EXPECT_EQ(count_lines(slurp(record)), 41u + 2u);
  std::remove(log.c_str());
  std::remove(record.c_str());
}
