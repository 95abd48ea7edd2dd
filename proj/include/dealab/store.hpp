#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dealab/campaign.hpp"
#include "dealab/rig.hpp"

namespace dealab::store {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// Telemetry lines carry t_s, channel, mode, voltage_v, current_ua,
// displacement_mm, force_n, clamp_force_n, hv_isolated; absent readings are null.
[[nodiscard]] Json sample_to_json(const rig::TelemetrySample& s);
[[nodiscard]] rig::TelemetrySample sample_from_json(const Json& j);
[[nodiscard]] std::string encode_sample(const rig::TelemetrySample& s);
[[nodiscard]] rig::TelemetrySample decode_sample(std::string_view line);

struct TelemetryLog {
  std::vector<rig::TelemetrySample> samples;
  bool partial_tail = false;  // a trailing line without newline was dropped
};

/// Loads a telemetry file. A final line without a terminating newline is
/// discarded and flagged; a malformed complete line throws StorageError.
[[nodiscard]] TelemetryLog load_telemetry(const fs::path& path);

/// Append-only JSONL writer for one channel. Flushes whenever the simulated
/// time advanced by flush_interval_s since the last flush (or went backwards,
/// which happens at each new trial).
class TelemetryWriter {
 public:
  explicit TelemetryWriter(fs::path path, double flush_interval_s = 1.0);
  ~TelemetryWriter();
  TelemetryWriter(const TelemetryWriter&) = delete;
  TelemetryWriter& operator=(const TelemetryWriter&) = delete;

  /// Returns the 1-based line number of the record.
  std::size_t append(const rig::TelemetrySample& s);
  void flush();
  void close();
  [[nodiscard]] bool closed() const { return file_ == nullptr; }
  [[nodiscard]] std::size_t lines() const { return lines_; }
  [[nodiscard]] const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  double interval_;
  std::FILE* file_ = nullptr;
  std::size_t lines_ = 0;
  double last_flush_t_ = 0.0;
};

struct TelemetryRef {
  std::string file;  // relative to the run directory
  std::size_t first_line = 0;
  std::size_t last_line = 0;

  friend bool operator==(const TelemetryRef&, const TelemetryRef&) = default;
};
[[nodiscard]] std::string format_ref(const TelemetryRef& r);
[[nodiscard]] TelemetryRef parse_ref(std::string_view s);

[[nodiscard]] const std::string& trial_csv_header();
[[nodiscard]] std::string encode_trial(const campaign::TrialRecord& r);
[[nodiscard]] campaign::TrialRecord decode_trial(std::string_view line);
[[nodiscard]] std::vector<campaign::TrialRecord> load_trials(const fs::path& csv);

[[nodiscard]] Json report_to_json(const campaign::CampaignReport& r);
[[nodiscard]] campaign::CampaignReport report_from_json(const Json& j);
[[nodiscard]] std::string report_csv(const campaign::CampaignReport& r);
[[nodiscard]] campaign::CampaignReport load_report(const fs::path& run_dir);

/// One campaign's output directory: manifest.json, telemetry/ch<N>.jsonl,
/// trials.csv, report.json, report.csv. The manifest is written on creation.
class RunDirectory {
 public:
  RunDirectory(fs::path dir, const Json& manifest, double flush_interval_s = 1.0);
  ~RunDirectory();
  RunDirectory(const RunDirectory&) = delete;
  RunDirectory& operator=(const RunDirectory&) = delete;

  [[nodiscard]] const fs::path& path() const { return dir_; }
  [[nodiscard]] static std::string telemetry_file(int channel);

  /// One writer thread per channel; different channels may append concurrently.
  std::size_t append_telemetry(int channel, const rig::TelemetrySample& s);
  void flush_telemetry(int channel);

  /// Rejects a device_id that is already in the table.
  void write_trial(const campaign::TrialRecord& r);
  void write_report(const campaign::CampaignReport& r);

  void close();
  [[nodiscard]] bool closed() const { return closed_; }

 private:
  TelemetryWriter& writer(int channel);

  fs::path dir_;
  double flush_interval_;
  std::atomic<bool> closed_{false};
  std::mutex writers_mu_;
  std::map<int, std::unique_ptr<TelemetryWriter>> writers_;
  std::mutex table_mu_;
  std::set<std::string> device_ids_;
};

/// Resolves a telemetry_ref against a run directory and returns its samples.
[[nodiscard]] std::vector<rig::TelemetrySample> read_ref(const fs::path& run_dir, std::string_view ref);

}  // namespace dealab::store
