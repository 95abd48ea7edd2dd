#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "dealab/errors.hpp"
#include "dealab/store.hpp"

using namespace dealab;
using namespace dealab::store;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int n = 0;
    path = fs::temp_directory_path() /
           ("dealab-store-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "-" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "-" + std::to_string(n++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

rig::TelemetrySample sample(double t, int ch = 0) {
  rig::TelemetrySample s;
  s.t = t;
  s.channel = ch;
  s.mode = rig::ChannelMode::ActuatingDisplacement;
  s.voltage = 1200.0 * (static_cast<long>(t * 10) % 2);
  s.current = 0.1 + t * 1e-3;
  s.displacement = 0.1 * t + 1.0 / 3.0;
  s.hv_isolated = false;
  return s;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

campaign::TrialRecord trial(const std::string& id) {
  campaign::TrialRecord r;
  r.stage = 2;
  r.cell = {{45, 50}, {device::Filler::CG, 2.9}};
  r.replicate = 1;
  r.device_id = id;
  r.channel = 1;
  r.seed = 0xfedcba9876543210ULL;
  r.status = rig::TrialStatus::Complete;
  r.lifetime = {1234.5678901234567, false, 0.123456789, analysis::TerminalCause::ThresholdCrossed};
  r.avg_displacement = 0.1 + 0.2;
  r.capacitance_degradation = 0.0123;
  r.telemetry_ref = "telemetry/ch1.jsonl#L10-L20";
  r.note = "has, comma \"quoted\"";
  return r;
}

}  // namespace

TEST(Store, SampleRoundTrip) {
  rig::TelemetrySample s = sample(1.7);
  EXPECT_EQ(decode_sample(encode_sample(s)), s);
  s.displacement.reset();
  s.force = 0.61;
  s.mode = rig::ChannelMode::MeasuringForce;
  EXPECT_EQ(decode_sample(encode_sample(s)), s);
  const Json j = sample_to_json(s);
  EXPECT_TRUE(j["displacement_mm"].is_null());
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"t_s", "channel", "mode", "voltage_v", "current_ua", "displacement_mm",
                                            "force_n", "clamp_force_n", "hv_isolated"}));
}

TEST(Store, TenThousandAppendsReloadInOrder) {
  TempDir d;
  const fs::path f = d.path / "ch0.jsonl";
  {
    TelemetryWriter w(f, 1.0);
    for (int i = 0; i < 10000; ++i) EXPECT_EQ(w.append(sample(i * 0.01)), static_cast<std::size_t>(i + 1));
  }
  const TelemetryLog log = load_telemetry(f);
  EXPECT_FALSE(log.partial_tail);
  ASSERT_EQ(log.samples.size(), 10000u);
  for (int i = 0; i < 10000; ++i) ASSERT_EQ(log.samples[i], sample(i * 0.01));
}

TEST(Store, AppendAfterCloseFails) {
  TempDir d;
  TelemetryWriter w(d.path / "x.jsonl");
  w.append(sample(0));
  w.close();
  EXPECT_TRUE(w.closed());
  EXPECT_THROW(w.append(sample(1)), StorageError);

  RunDirectory run(d.path / "run", Json{{"name", "t"}});
  run.append_telemetry(0, sample(0));
  run.close();
  EXPECT_THROW(run.append_telemetry(0, sample(1)), StorageError);
  EXPECT_THROW(run.write_trial(trial("a")), StorageError);
}

TEST(Store, TruncationAtAnyByteLeavesValidPrefix) {
  TempDir d;
  const fs::path f = d.path / "ch0.jsonl";
  {
    TelemetryWriter w(f);
    for (int i = 0; i < 40; ++i) w.append(sample(i * 0.5));
  }
  const std::string full = read_file(f);
  std::vector<std::size_t> line_ends;
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (full[i] == '\n') line_ends.push_back(i + 1);
  }
  const fs::path cut = d.path / "cut.jsonl";
  for (std::size_t len = 0; len <= full.size(); ++len) {
    {
      std::ofstream out(cut, std::ios::binary | std::ios::trunc);
      out.write(full.data(), static_cast<std::streamsize>(len));
    }
    const TelemetryLog log = load_telemetry(cut);
    const auto complete = static_cast<std::size_t>(std::upper_bound(line_ends.begin(), line_ends.end(), len) -
                                                   line_ends.begin());
    ASSERT_EQ(log.samples.size(), complete) << len;
    const bool at_boundary = len == 0 || std::find(line_ends.begin(), line_ends.end(), len) != line_ends.end();
    ASSERT_EQ(log.partial_tail, !at_boundary) << len;
    for (std::size_t i = 0; i < complete; ++i) ASSERT_EQ(log.samples[i], sample(i * 0.5));
  }
}

TEST(Store, CorruptCompleteLineIsAnError) {
  TempDir d;
  const fs::path f = d.path / "bad.jsonl";
  std::ofstream(f) << encode_sample(sample(0)) << "\n{not json}\n";
  EXPECT_THROW((void)load_telemetry(f), StorageError);
}

TEST(Store, TrialRoundTrip) {
  campaign::TrialRecord r = trial("dev-1");
  EXPECT_EQ(decode_trial(encode_trial(r)), r);
  r.capacitance_degradation.reset();
  r.status = rig::TrialStatus::Aborted;
  r.lifetime.cause = analysis::TerminalCause::Aborted;
  r.note.clear();
  EXPECT_EQ(decode_trial(encode_trial(r)), r);
  r.lifetime = {10800, true, 0.2, analysis::TerminalCause::Cap};
  EXPECT_EQ(decode_trial(encode_trial(r)), r);
}

TEST(Store, RefRoundTrip) {
  const TelemetryRef r{"telemetry/ch3.jsonl", 17, 420};
  EXPECT_EQ(format_ref(r), "telemetry/ch3.jsonl#L17-L420");
  EXPECT_EQ(parse_ref(format_ref(r)), r);
  EXPECT_THROW((void)parse_ref("telemetry/ch3.jsonl"), StorageError);
}

TEST(Store, RunDirectoryLayout) {
  TempDir d;
  const fs::path dir = d.path / "run";
  {
    RunDirectory run(dir, Json{{"name", "empty"}});
    run.close();
  }
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_EQ(read_file(dir / "trials.csv"), trial_csv_header() + "\n");
  EXPECT_TRUE(load_trials(dir / "trials.csv").empty());
  EXPECT_THROW(RunDirectory(dir, Json::object()), StorageError);
}

TEST(Store, DuplicateDeviceRejected) {
  TempDir d;
  RunDirectory run(d.path / "run", Json::object());
  run.write_trial(trial("a"));
  EXPECT_THROW(run.write_trial(trial("a")), StorageError);
  run.write_trial(trial("b"));
  run.close();
  const auto back = load_trials(d.path / "run" / "trials.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], trial("a"));
}

TEST(Store, RefsResolveToAppendedLines) {
  TempDir d;
  RunDirectory run(d.path / "run", Json::object(), 5.0);
  std::size_t first = 0, last = 0;
  for (int i = 0; i < 30; ++i) {
    const std::size_t line = run.append_telemetry(2, sample(i, 2));
    if (i == 10) first = line;
    if (i == 19) last = line;
  }
  run.flush_telemetry(2);
  const std::string ref = format_ref({RunDirectory::telemetry_file(2), first, last});
  const auto got = read_ref(d.path / "run", ref);
  ASSERT_EQ(got.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(got[i], sample(10 + i, 2));
}

TEST(Store, ConcurrentChannelsDoNotInterleave) {
  TempDir d;
  RunDirectory run(d.path / "run", Json::object());
  std::vector<std::thread> ts;
  for (int ch = 0; ch < 4; ++ch) {
    ts.emplace_back([&, ch] {
      for (int i = 0; i < 2000; ++i) run.append_telemetry(ch, sample(i * 0.01, ch));
    });
  }
  for (auto& t : ts) t.join();
  run.close();
  for (int ch = 0; ch < 4; ++ch) {
    const auto log = load_telemetry(d.path / "run" / RunDirectory::telemetry_file(ch));
    ASSERT_EQ(log.samples.size(), 2000u);
    for (int i = 0; i < 2000; ++i) ASSERT_EQ(log.samples[i], sample(i * 0.01, ch));
  }
}

TEST(Store, ReportRoundTrip) {
  campaign::CampaignReport rep;
  rep.name = "rt";
  rep.seed = 12345678901234567ULL;
  rep.trials = 3;
  campaign::CellSummary s;
  s.stage = 2;
  s.cell = {{40, 1}, {device::Filler::LM, 1.8}};
  s.trials = 3;
  s.completed = 2;
  s.censored = 1;
  s.lifetime_mean = 1.0 / 3.0;
  s.lifetime_std = 0.1;
  s.displacement_mean = 2.0 / 7.0;
  rep.cells = {s};
  rep.boundary = {{40, 1}};
  rep.selections = {{{40, 1}, {device::Filler::CG, 2.5}, {device::Filler::CB, 2.9}, device::MaterialConfig{device::Filler::CG, 2.9}}};
  campaign::BoundaryComparison c;
  c.point = {40, 1};
  c.best = {"best", {device::Filler::CG, 2.5}, 2, 4000.1, 0.31};
  c.baseline = {"baseline", campaign::kBaseline, 2, 3000.2, 0.3};
  c.worst = {"worst", {device::Filler::CB, 1.8}, 2, 2000.3, 0.2};
  c.lifetime_gain_vs_baseline_pct = 33.3333333333333;
  c.stage3 = device::MaterialConfig{device::Filler::CG, 2.9};
  rep.comparisons = {c};
  EXPECT_EQ(report_from_json(report_to_json(rep)), rep);
  EXPECT_EQ(report_from_json(Json::parse(report_to_json(rep).dump())), rep);

  TempDir d;
  {
    RunDirectory run(d.path / "run", Json::object());
    run.write_report(rep);
    run.close();
  }
  EXPECT_EQ(load_report(d.path / "run"), rep);
  const std::string csv = read_file(d.path / "run" / "report.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}
