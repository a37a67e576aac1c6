// rcmctl: offline simulation, metrics reports and the control server.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "rcm/config.hpp"
#include "rcm/metrics.hpp"
#include "rcm/script.hpp"
#include "rcm/server/server.hpp"
#include "rcm/simulator.hpp"
#include "rcm/trajectory_io.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kValidation = 2, kRuntime = 3 };

int exit_code_for(rcm::Errc code) {
  switch (code) {
    case rcm::Errc::invalid_argument:
    case rcm::Errc::parse_error:
    case rcm::Errc::schema_mismatch:
    case rcm::Errc::malformed_row:
    case rcm::Errc::non_monotone_time:
    case rcm::Errc::config_mismatch:
    case rcm::Errc::empty_episode:
      return kValidation;
    default:
      return kRuntime;
  }
}

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

rcm::Config load(const std::string& path) { return path.empty() ? rcm::Config{} : rcm::load_config(path); }

struct SimulateArgs {
  std::string script;
  std::string config;
  std::string out;
  std::optional<double> dt;
};

int cmd_simulate(const SimulateArgs& a) {
  rcm::Config cfg = load(a.config);
  if (a.dt) {
    cfg.sim.dt = *a.dt;
    cfg.sim.validate();
  }
  const rcm::CommandScript script = rcm::load_script(a.script);
  const rcm::EpisodeRecord rec = rcm::run_episode(script, cfg.sim);
  if (a.out.empty() || a.out == "-") {
    rcm::write_csv(rec, std::cout);
  } else {
    rcm::write_csv(rec, a.out);
    std::cerr << "wrote " << rec.rows.size() << " rows to " << a.out << "\n";
  }
  return kOk;
}

struct MetricsArgs {
  std::vector<std::string> episodes;
  std::string config;
  std::string out;
  std::string series_out;
  double fs = 5.0;
  bool raw_rate = false;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

int cmd_metrics(const MetricsArgs& a) {
  const rcm::Config cfg = load(a.config);
  const rcm::SparcParams params;
  std::ostringstream table;
  table << "episode,rows,duration_s,dev_mean_mm,dev_median_mm,dev_max_mm,dev_min_mm,sparc,ldlj,"
           "metric_rate_hz,metric_samples,sparc_cutoff_hz,sparc_amp_threshold,sparc_padding_level\n";
  std::ofstream series;
  if (!a.series_out.empty()) {
    series.open(a.series_out);
    if (!series) {
      throw rcm::Error(rcm::Errc::io_failure, "cannot open '" + a.series_out + "'");
    }
    series << "episode,time_s,deviation_mm\n";
  }

  for (const std::string& path : a.episodes) {
    const rcm::EpisodeRecord rec = rcm::read_csv(path);
    rcm::check_consistency(rec, cfg.sim.rcm, cfg.sim.calib);
    const rcm::DeviationStats dev = rcm::rcm_deviation_series(rec, cfg.sim.rcm.p_rcm, cfg.sim.calib);
    const rcm::SmoothnessResult sm = rcm::episode_smoothness(rec, a.fs, a.raw_rate, params);
    const double duration = rec.rows.back().time - rec.rows.front().time;

    std::cout << "episode: " << path << "\n"
              << "  rows: " << rec.rows.size() << "  duration_s: " << fmt(duration)
              << "  dt: " << fmt(rec.header.dt) << "\n"
              << "  rcm_deviation_mm: mean " << fmt(dev.mean_mm) << "  median " << fmt(dev.median_mm)
              << "  max " << fmt(dev.max_mm) << "  min " << fmt(dev.min_mm) << "\n"
              << "  smoothness: sparc " << fmt(sm.sparc) << "  ldlj " << fmt(sm.ldlj) << "  at "
              << fmt(sm.sample_rate_hz) << " Hz (" << sm.samples << " samples)\n"
              << "  sparc_params: cutoff_hz " << fmt(params.cutoff_hz) << "  amp_threshold "
              << fmt(params.amp_threshold) << "  padding_level " << params.padding_level << "\n";

    table << path << ',' << rec.rows.size() << ',' << fmt(duration) << ',' << fmt(dev.mean_mm) << ','
          << fmt(dev.median_mm) << ',' << fmt(dev.max_mm) << ',' << fmt(dev.min_mm) << ',' << fmt(sm.sparc)
          << ',' << fmt(sm.ldlj) << ',' << fmt(sm.sample_rate_hz) << ',' << sm.samples << ','
          << fmt(params.cutoff_hz) << ',' << fmt(params.amp_threshold) << ',' << params.padding_level << "\n";
    if (series) {
      for (std::size_t i = 0; i < rec.rows.size(); ++i) {
        series << path << ',' << rcm::format_double(rec.rows[i].time) << ','
               << rcm::format_double(dev.series_mm[i]) << "\n";
      }
    }
  }

  if (a.out.empty()) {
    std::cout << "\n" << table.str();
  } else {
    std::ofstream out(a.out);
    out << table.str();
    if (!out) {
      throw rcm::Error(rcm::Errc::io_failure, "cannot write '" + a.out + "'");
    }
  }
  return kOk;
}

struct ServeArgs {
  std::string config;
  std::optional<int> tcp_port;
  std::optional<int> ws_port;
  std::optional<double> dt;
  bool test_mode = false;
  std::string bind;
  std::string record;
};

int cmd_serve(const ServeArgs& a) {
  rcm::Config cfg = load(a.config);
  if (a.tcp_port) cfg.server.tcp_port = *a.tcp_port;
  if (a.ws_port) cfg.server.ws_port = *a.ws_port;
  if (a.dt) {
    cfg.sim.dt = *a.dt;
    cfg.sim.validate();
  }
  if (a.test_mode) cfg.server.test_mode = true;

  rcm::server::ServerOptions opts;
  if (!a.bind.empty()) opts.bind_address = a.bind;
  opts.record_from_start = !a.record.empty();

  rcm::server::ControlServer server(cfg, opts);
  server.start();
  std::cerr << "rcmctl serve: tcp " << opts.bind_address << ':' << server.tcp_port() << "  ws ws://"
            << opts.bind_address << ':' << server.ws_port() << "/ws  "
            << (cfg.server.test_mode ? "test mode (tick-driven)" : "live") << std::endl;

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  server.stop();
  std::cerr << "rcmctl serve: stopped after " << server.ticks() << " ticks\n";
  if (!a.record.empty()) {
    rcm::write_csv(server.core().record(), a.record);
    std::cerr << "wrote session record to " << a.record << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RCM-constrained instrument simulator, metrics and control server"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a command script offline and write the episode CSV");
  simulate->add_option("script", sim.script, "Command script")->required()->check(CLI::ExistingFile);
  simulate->add_option("--config", sim.config, "Configuration file (JSON)")->check(CLI::ExistingFile);
  simulate->add_option("--out,-o", sim.out, "Output CSV (default: stdout)");
  simulate->add_option("--dt", sim.dt, "Control period in seconds (overrides config)");

  MetricsArgs met;
  auto* metrics = app.add_subcommand("metrics", "Report RCM deviation and smoothness of recorded episodes");
  metrics->add_option("episodes", met.episodes, "Episode CSV files")->required()->check(CLI::ExistingFile);
  metrics->add_option("--config", met.config, "Configuration the episodes were recorded with")
      ->check(CLI::ExistingFile);
  metrics->add_option("--fs", met.fs, "Metric sample rate in Hz")->capture_default_str();
  metrics->add_flag("--raw-rate-metrics", met.raw_rate, "Compute smoothness at the recorded control rate");
  metrics->add_option("--out,-o", met.out, "Write the summary table (CSV) here instead of stdout");
  metrics->add_option("--series-out", met.series_out, "Write the per-row deviation series (CSV)");

  ServeArgs srv;
  auto* serve = app.add_subcommand("serve", "Run the control server");
  serve->add_option("--config", srv.config, "Configuration file (JSON)")->check(CLI::ExistingFile);
  serve->add_option("--tcp-port", srv.tcp_port, "NDJSON TCP port (default 5555)");
  serve->add_option("--ws-port", srv.ws_port, "WebSocket port (default 8765)");
  serve->add_option("--dt", srv.dt, "Control period in seconds (overrides config)");
  serve->add_flag("--test-mode", srv.test_mode, "Advance time only on 'step' messages");
  serve->add_option("--bind", srv.bind, "Listen address (default 127.0.0.1)");
  serve->add_option("--record", srv.record, "Record the whole session and write it here on exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*metrics) return cmd_metrics(met);
    if (*serve) return cmd_serve(srv);
  } catch (const rcm::EpisodeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  } catch (const rcm::MalformedRow& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const rcm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
