#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "dealab/campaign.hpp"
#include "dealab/station.hpp"
#include "dealab/store.hpp"

namespace dealab::campaign {

using Json = store::Json;

/// Campaign manifest shared by the CLI and the service.
struct Manifest {
  int schema_version = kSchemaVersion;
  std::string name = "campaign";
  std::uint64_t seed = 1;
  ParamSpace space{};
  rig::TrialProtocol protocol{};
  BoundaryOptions boundary{};
  device::DeviceSpec device = device::DeviceSpec::test_sample();
  double duty = 0.5;
  int channels = 2;
  int max_stage = 3;
  double telemetry_log_hz = 1.0;  // displacement samples persisted per second of trial time
  double flush_interval_s = 1.0;
  std::string calibration_file;  // empty: built-in defaults
  std::map<std::string, std::string> calibration_overrides;

  void validate() const;
  [[nodiscard]] device::Calibration calibration() const;
  [[nodiscard]] Json to_json() const;
  /// Unknown keys are rejected. A relative calibration_file is resolved against base_dir.
  static Manifest from_json(const Json& j, const std::filesystem::path& base_dir = {});
  static Manifest load(const std::filesystem::path& path);
};

struct ProgressEvent {
  std::string kind;  // stage-started, trial-started, trial-ended, cell-completed, boundary-selected, ...
  Json data;
};

struct RunOptions {
  std::function<void(const ProgressEvent&)> on_progress;
  const std::atomic<bool>* cancel = nullptr;
};

/// Seeds for one planned trial. The failure quantile depends only on the
/// replicate index so every cell sees the same device population.
struct TrialSeeds {
  std::uint64_t device = 0;
  std::uint64_t failure = 0;
};
[[nodiscard]] TrialSeeds trial_seeds(std::uint64_t campaign_seed, const PlannedTrial& t);

/// Executes the staged pipeline on a set of stations and persists everything
/// into one run directory. Trials in a wave are dealt round-robin to the
/// stations, so the outcome does not depend on thread timing.
class CampaignRunner {
 public:
  CampaignRunner(Manifest manifest, std::filesystem::path run_dir, std::vector<rig::Station*> stations,
                 RunOptions opts = {});

  CampaignReport run();

  [[nodiscard]] Json status() const;
  [[nodiscard]] std::vector<PlannedTrial> stage1_preview() const { return plan_stage1(manifest_.space); }
  [[nodiscard]] const std::filesystem::path& run_dir() const { return run_dir_; }

 private:
  std::vector<TrialRecord> run_wave(const std::vector<PlannedTrial>& wave);
  TrialRecord run_one(rig::Station& st, const PlannedTrial& t);
  void progress(std::string kind, Json data);
  void set_cell_state(int stage, const Cell& cell, const std::string& state);
  [[nodiscard]] bool cancelled() const { return opts_.cancel && opts_.cancel->load(); }

  Manifest manifest_;
  std::filesystem::path run_dir_;
  std::vector<rig::Station*> stations_;
  RunOptions opts_;
  std::unique_ptr<store::RunDirectory> store_;
  std::vector<TrialRecord> records_;

  std::mutex progress_mu_;
  mutable std::mutex status_mu_;
  std::string phase_ = "pending";
  std::string error_;
  std::map<std::string, Json> cells_;  // key: "s<stage> <label>"
  std::map<int, std::string> running_;
  std::size_t trials_done_ = 0;
  std::vector<OperatingPoint> boundary_;
};

/// Convenience for the CLI: builds `manifest.channels` stations and runs.
CampaignReport run_campaign(const Manifest& manifest, const std::filesystem::path& run_dir, double accel = 0.0,
                            RunOptions opts = {});

}  // namespace dealab::campaign
