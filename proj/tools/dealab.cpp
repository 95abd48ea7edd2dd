#include <CLI11.hpp>
#include <httplib.h>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dealab/campaign.hpp"
#include "dealab/errors.hpp"
#include "dealab/gait.hpp"
#include "dealab/rig.hpp"
#include "dealab/rng.hpp"
#include "dealab/runner.hpp"
#include "dealab/service.hpp"
#include "dealab/sim_backend.hpp"
#include "dealab/store.hpp"

namespace fs = std::filesystem;
using namespace dealab;

namespace {

fs::path data_root() {
  if (const char* env = std::getenv("DEA_LAB_DATA_DIR"); env && *env) return env;
  return "runs";
}

void print_comparison(const campaign::CampaignReport& rep) {
  std::printf("campaign %s  seed %llu  trials %zu\n", rep.name.c_str(), static_cast<unsigned long long>(rep.seed),
              rep.trials);
  std::printf("boundary:");
  for (const auto& p : rep.boundary) std::printf("  %g V/um @ %g Hz", p.field, p.freq);
  std::printf("\n");
  for (const auto& c : rep.comparisons) {
    std::printf("\n%g V/um @ %g Hz\n", c.point.field, c.point.freq);
    std::printf("  %-9s %-8s %6s %12s %16s\n", "role", "material", "stage", "lifetime_s", "displacement_mm");
    for (const auto* r : {&c.best, &c.baseline, &c.worst}) {
      std::printf("  %-9s %-8s %6d %12.1f %16.4f\n", r->role.c_str(), device::to_string(r->material).c_str(), r->stage,
                  r->lifetime_mean, r->displacement_mean);
    }
    std::printf("  lifetime: %+.1f %% vs baseline, %+.1f %% vs worst\n", c.lifetime_gain_vs_baseline_pct,
                c.lifetime_gain_vs_worst_pct);
    std::printf("  displacement: %+.1f %% vs baseline, %+.1f %% vs worst\n", c.displacement_delta_vs_baseline_pct,
                c.displacement_delta_vs_worst_pct);
    if (c.stage3) std::printf("  stage-3 combination: %s\n", device::to_string(*c.stage3).c_str());
  }
}

campaign::CampaignReport regenerate(const fs::path& dir, const std::vector<campaign::TrialRecord>& records) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw StorageError("no manifest.json in " + dir.string());
  const auto m = campaign::Manifest::from_json(store::Json::parse(in), dir);
  const auto boundary = campaign::select_boundary(campaign::summarize(records, 1), m.space, m.boundary);
  std::vector<campaign::MaterialSelection> sels;
  campaign::CampaignReport rep;
  if (!campaign::summarize(records, 2).empty()) {
    sels = campaign::select_best_material(campaign::summarize(records, 2), boundary);
    rep = campaign::compile_report(records, boundary, sels);
  } else {
    rep = campaign::compile_report(records, {}, {});
  }
  rep.boundary = boundary;
  rep.name = m.name;
  rep.seed = m.seed;
  return rep;
}

int cmd_campaign_run(const std::string& manifest_path, std::optional<std::uint64_t> seed, double accel,
                     std::string out, bool quiet) {
  auto m = campaign::Manifest::load(manifest_path);
  if (seed) m.seed = *seed;
  const fs::path dir = out.empty() ? data_root() / (m.name + "-seed" + std::to_string(m.seed)) : fs::path(out);
  campaign::RunOptions opts;
  if (!quiet) {
    opts.on_progress = [](const campaign::ProgressEvent& e) {
      if (e.kind == "trial-ended") {
        std::fprintf(stderr, "[ch%d] %s %s lifetime %.1f s%s\n", e.data.at("channel").get<int>(),
                     e.data.at("device_id").get<std::string>().c_str(), e.data.at("status").get<std::string>().c_str(),
                     e.data.at("lifetime_s").get<double>(), e.data.at("censored").get<bool>() ? " (censored)" : "");
      } else if (e.kind != "trial-started") {
        std::fprintf(stderr, "%s %s\n", e.kind.c_str(), e.data.dump().c_str());
      }
    };
  }
  const auto rep = campaign::run_campaign(m, dir, accel, opts);
  print_comparison(rep);
  std::printf("\nrun directory: %s\n", dir.string().c_str());
  return 0;
}

int cmd_campaign_report(const fs::path& dir, bool write) {
  const fs::path csv = dir / "trials.csv";
  std::vector<campaign::TrialRecord> records;
  if (fs::exists(csv)) records = store::load_trials(csv);
  if (records.empty()) {
    std::fprintf(stderr, "error: no trials in %s\n", dir.string().c_str());
    return 1;
  }
  const auto rep = regenerate(dir, records);
  if (write) {
    store::Json j = store::report_to_json(rep);
    std::ofstream(dir / "report.json") << j.dump(2) << "\n";
    std::ofstream(dir / "report.csv") << store::report_csv(rep);
  }
  print_comparison(rep);
  return 0;
}

int cmd_trial_run(double field, double freq, const std::string& filler, double cnt, std::uint64_t seed, double cap,
                  int replicates) {
  device::DeviceSpec spec = device::DeviceSpec::test_sample({device::parse_filler(filler), cnt});
  spec.validate();
  rig::SimulatedBackend backend;
  rig::Channel channel(0, backend);
  rig::TrialRequest req;
  req.field = field;
  req.frequency = freq;
  req.layer_thickness_um = spec.layer_thickness_um;
  req.protocol.lifetime.cap = cap;
  int rc = 0;
  double sum = 0.0;
  std::printf("replicate,status,lifetime_s,censored,cause,initial_amplitude_mm,avg_displacement_mm,capacitance_degradation\n");
  for (int r = 0; r < replicates; ++r) {
    backend.mount(spec, derive_seed(seed, static_cast<std::uint64_t>(r)));
    const auto out = channel.run_trial(req);
    std::printf("%d,%s,%.3f,%s,%s,%.5f,%.5f,%.5f\n", r, std::string(rig::to_string(out.status)).c_str(),
                out.lifetime.lifetime, out.lifetime.censored ? "true" : "false",
                std::string(analysis::to_string(out.lifetime.cause)).c_str(), out.lifetime.initial_amplitude,
                out.avg_displacement, out.capacitance_degradation.value_or(0.0));
    sum += out.lifetime.lifetime;
    if (out.status == rig::TrialStatus::Faulted) {
      std::fprintf(stderr, "error: trial faulted: %s\n", out.fault_reason.c_str());
      channel.reset_fault();
      rc = 1;
    }
  }
  std::fprintf(stderr, "mean lifetime %.1f s over %d replicate(s)\n", sum / replicates, replicates);
  return rc;
}

int cmd_gait(const std::string& what, const std::string& config, const std::string& mode_s) {
  const auto cfg = config.empty() ? KeyValueConfig{} : KeyValueConfig::load(config);
  const auto geom = gait::UnitGeometry::from_config(cfg);
  geom.validate();
  const auto mode = gait::parse_force_mode(mode_s);
  if (what == "pose") {
    gait::ActuatorDrive d{cfg.get_double("e1_mm", 0), cfg.get_double("e2_mm", 0), cfg.get_double("e3_mm", 0),
                          cfg.get_double("F1_n", 0),  cfg.get_double("F2_n", 0),  cfg.get_double("F3_n", 0)};
    const auto p = gait::pose(geom, d);
    const auto f = gait::body_forces(p, d, mode);
    std::printf("h_c_mm,w_c_mm,delta_h_mm,delta_l_mm,delta_w_mm,d_mm,theta_b_deg,F_x_n,F_y_n\n");
    std::printf("%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n", p.h_c, p.w_c, p.delta_h, p.delta_l, p.delta_w, p.d,
                p.theta_b_deg, f.F_x, f.F_y);
    return 0;
  }
  const auto sched = gait::walk_cycle_schedule(
      cfg.get_double("cycle_freq_hz", 6.0),
      {cfg.get_double("phase1_fraction", 1.0 / 3), cfg.get_double("phase2_fraction", 1.0 / 3),
       cfg.get_double("phase3_fraction", 1.0 / 3)});
  const auto steps = gait::simulate_cycle(geom, device::Calibration::defaults(), device::DeviceSpec::scaled(),
                                          cfg.get_double("field_v_per_um", 42.0), sched,
                                          static_cast<int>(cfg.get_int("units", 1)), mode);
  std::printf("unit,phase,t_start_s,e1_mm,e2_mm,e3_mm,F1_n,F2_n,F3_n,h_c_mm,w_c_mm,d_mm,theta_b_deg,F_x_n,F_y_n\n");
  for (const auto& s : steps) {
    std::printf("%d,%d,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n", s.unit, s.phase, s.t_start,
                s.drive.e1, s.drive.e2, s.drive.e3, s.drive.F1, s.drive.F2, s.drive.F3, s.pose.h_c, s.pose.w_c,
                s.pose.d, s.pose.theta_b_deg, s.forces.F_x, s.forces.F_y);
  }
  return 0;
}

int cmd_rig_demo() {
  rig::SimulatedBackend backend;
  rig::Channel ch(0, backend);
  ch.set_event_sink([](int, const rig::RigEvent& e) {
    std::printf("%9.3f s  %-20s %s\n", e.t, e.kind.c_str(), e.detail.c_str());
  });
  const auto spec = device::DeviceSpec::scaled();
  backend.mount(spec, 1);
  const auto wave = waveform::WaveformSpec::dc_square(42.0, 1.0, 60.0);

  std::printf("-- displacement under the LDS\n");
  ch.switch_mode(rig::MeasurementTarget::Displacement);
  ch.start_drive(wave, spec.layer_thickness_um);
  double lo = 1e9, hi = -1e9;
  ch.set_telemetry_sink([&](const rig::TelemetrySample& s) {
    if (s.displacement) {
      lo = std::min(lo, *s.displacement);
      hi = std::max(hi, *s.displacement);
    }
  });
  ch.acquire(3.0, 100.0);
  std::printf("   stroke %.3f mm\n", hi - lo);

  std::printf("-- impedance requested while HV is live\n");
  try {
    ch.switch_mode(rig::MeasurementTarget::Impedance);
  } catch (const InterlockViolation& e) {
    std::printf("   rejected: %s\n", e.what());
  }

  std::printf("-- blocked force with 0.6 N bias\n");
  ch.switch_mode(rig::MeasurementTarget::Force, 0.6);
  std::printf("   clamp force %.3f N at %.2f mm\n", ch.stage().clamp_force, ch.stage().linear_pos);
  ch.start_drive(wave, spec.layer_thickness_um);
  double peak = 0.0;
  ch.set_telemetry_sink([&](const rig::TelemetrySample& s) {
    if (s.force) peak = std::max(peak, *s.force - s.clamp_force);
  });
  ch.acquire(3.0, 100.0);
  std::printf("   blocked force above bias %.3f N\n", peak);

  ch.stop_drive();

  std::printf("-- impedance sweep, HV isolated\n");
  ch.switch_mode(rig::MeasurementTarget::Impedance);
  ch.set_telemetry_sink(nullptr);
  const auto sweep = ch.impedance_sweep();
  std::printf("   C(1 kHz) %.4f nF, C(1 MHz) %.4f nF\n", sweep.front().capacitance_nf, sweep.back().capacitance_nf);

  ch.park();
  return 0;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const std::string& host, int port, int channels, double accel, std::string data_dir) {
  service::ServiceConfig cfg;
  cfg.channels = channels;
  cfg.accel = accel;
  cfg.data_dir = data_dir.empty() ? data_root() : fs::path(data_dir);
  fs::create_directories(cfg.data_dir);
  service::Service svc(cfg);
  httplib::Server server;
  svc.mount(server);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::fprintf(stderr, "listening on %s:%d (%d channels, %gx, data in %s)\n", host.c_str(), port, channels, accel,
               cfg.data_dir.string().c_str());
  if (!server.listen(host, port)) {
    std::fprintf(stderr, "error: cannot listen on %s:%d\n", host.c_str(), port);
    return 1;
  }
  g_server = nullptr;
  svc.broadcaster().close_all();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DEA lifetime-testing lab on simulated hardware"};
  app.require_subcommand(1);
  int rc = 0;

  auto* campaign_cmd = app.add_subcommand("campaign", "Run or report staged campaigns");
  campaign_cmd->require_subcommand(1);
  auto* run = campaign_cmd->add_subcommand("run", "Run a campaign manifest against the simulator");
  std::string manifest;
  std::optional<std::uint64_t> seed;
  double accel = 0.0;
  std::string out;
  bool quiet = false;
  run->add_option("manifest", manifest, "Campaign manifest (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the manifest seed");
  run->add_option("--accel", accel, "Simulated seconds per wall second (0 = as fast as possible)")
      ->check(CLI::NonNegativeNumber);
  run->add_option("--out", out, "Run directory (default $DEA_LAB_DATA_DIR/<name>-seed<S>)");
  run->add_flag("-q,--quiet", quiet, "No progress on stderr");
  run->callback([&] { rc = cmd_campaign_run(manifest, seed, accel, out, quiet); });

  auto* report = campaign_cmd->add_subcommand("report", "Print the comparison table of a run directory");
  std::string run_dir;
  bool write = false;
  report->add_option("run-dir", run_dir, "Run directory")->required();
  report->add_flag("--write", write, "Rewrite report.json and report.csv from trials.csv");
  report->callback([&] { rc = cmd_campaign_report(run_dir, write); });

  auto* trial_cmd = app.add_subcommand("trial", "Single-cell trials");
  trial_cmd->require_subcommand(1);
  auto* trun = trial_cmd->add_subcommand("run", "Run trials for one cell");
  double field = 40.0, freq = 1.0, cnt = 2.5, cap = 10800.0;
  std::string filler = "CB";
  std::uint64_t tseed = 1;
  int replicates = 1;
  trun->add_option("--field", field, "V/um")->required();
  trun->add_option("--freq", freq, "Hz")->required();
  trun->add_option("--filler", filler, "LM, CB or CG");
  trun->add_option("--cnt", cnt, "CNT concentration, mL/FA");
  trun->add_option("--seed", tseed, "Device seed");
  trun->add_option("--cap", cap, "Lifetime cap, s");
  trun->add_option("--replicates", replicates, "Number of devices")->check(CLI::PositiveNumber);
  trun->callback([&] { rc = cmd_trial_run(field, freq, filler, cnt, tseed, cap, replicates); });

  auto* gait_cmd = app.add_subcommand("gait", "Analytical locomotion model");
  std::string what, gait_config, mode = "printed";
  gait_cmd->add_option("what", what, "pose or cycle")->required()->check(CLI::IsMember({"pose", "cycle"}));
  gait_cmd->add_option("--config", gait_config, "Geometry/schedule file")->check(CLI::ExistingFile);
  gait_cmd->add_option("--mode", mode, "Vertical-force variant")->check(CLI::IsMember({"printed", "corrected"}));
  gait_cmd->callback([&] { rc = cmd_gait(what, gait_config, mode); });

  auto* rig_cmd = app.add_subcommand("rig", "Channel walkthroughs");
  rig_cmd->require_subcommand(1);
  rig_cmd->add_subcommand("demo", "Scripted mode-switch sequence")->callback([&] { rc = cmd_rig_demo(); });

  auto* serve = app.add_subcommand("serve", "HTTP control and telemetry service");
  std::string host = "127.0.0.1", data_dir;
  int port = 8080, channels = 2;
  double serve_accel = 1000.0;
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--channels", channels)->check(CLI::Range(1, 16));
  serve->add_option("--accel", serve_accel, "Simulated seconds per wall second")->check(CLI::NonNegativeNumber);
  serve->add_option("--data-dir", data_dir, "Run directory root (default $DEA_LAB_DATA_DIR or ./runs)");
  serve->callback([&] { rc = cmd_serve(host, port, channels, serve_accel, data_dir); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const rig::RigFault& e) {
    std::fprintf(stderr, "error: channel fault: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return rc;
}
