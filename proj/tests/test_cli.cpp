#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args, bool with_stderr = true) {
  const std::string cmd = std::string(DEALAB_CLI) + " " + args + (with_stderr ? " 2>&1" : " 2>/dev/null");
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("dealab-cli-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const std::string kQuick = std::string(DEALAB_SOURCE_DIR) + "/config/manifests/quick.json";

}  // namespace

TEST(Cli, CampaignRunTwiceIsByteIdentical) {
  TempDir d("twice");
  const Result a = run("campaign run " + kQuick + " -q --out " + (d.path / "a").string());
  ASSERT_EQ(a.code, 0) << a.out;
  const Result b = run("campaign run " + kQuick + " -q --out " + (d.path / "b").string());
  ASSERT_EQ(b.code, 0) << b.out;
  // manifest.json carries the wall-clock run epoch and legitimately differs
  for (const char* f : {"report.json", "report.csv", "trials.csv"}) {
    const std::string x = slurp(d.path / "a" / f);
    EXPECT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, slurp(d.path / "b" / f)) << f;
  }
  EXPECT_EQ(slurp(d.path / "a" / "telemetry" / "ch0.jsonl"), slurp(d.path / "b" / "telemetry" / "ch0.jsonl"));

  // regenerating the report from the stored trials reproduces it exactly
  const std::string before = slurp(d.path / "a" / "report.json");
  const Result rep = run("campaign report " + (d.path / "a").string() + " --write");
  ASSERT_EQ(rep.code, 0) << rep.out;
  EXPECT_NE(rep.out.find("Hz"), std::string::npos);
  EXPECT_EQ(slurp(d.path / "a" / "report.json"), before);
}

TEST(Cli, SeedOverrideChangesRun) {
  TempDir d("seed");
  ASSERT_EQ(run("campaign run " + kQuick + " -q --seed 8 --out " + (d.path / "s8").string()).code, 0);
  ASSERT_EQ(run("campaign run " + kQuick + " -q --out " + (d.path / "s7").string()).code, 0);
  EXPECT_NE(slurp(d.path / "s8" / "trials.csv"), slurp(d.path / "s7" / "trials.csv"));
}

TEST(Cli, ReportOnEmptyDirFails) {
  TempDir d("empty");
  const Result r = run("campaign report " + d.path.string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("no trials"), std::string::npos) << r.out;
}

TEST(Cli, BadManifestFails) {
  TempDir d("bad");
  std::ofstream(d.path / "m.json") << R"({"name": "x", "surprise": true})";
  const Result r = run("campaign run " + (d.path / "m.json").string() + " --out " + (d.path / "o").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("surprise"), std::string::npos) << r.out;
}

TEST(Cli, GaitPoseNeutralRow) {
  const Result r = run("gait pose --config " + std::string(DEALAB_SOURCE_DIR) + "/config/gait.conf", false);
  ASSERT_EQ(r.code, 0);
  std::istringstream in(r.out);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header.rfind("h_c_mm,w_c_mm", 0), 0u);
  EXPECT_EQ(row.rfind("20,20,", 0), 0u) << row;
}

TEST(Cli, GaitCycleModes) {
  const std::string cfg = std::string(DEALAB_SOURCE_DIR) + "/config/gait.conf";
  const Result printed = run("gait cycle --config " + cfg, false);
  const Result corrected = run("gait cycle --config " + cfg + " --mode corrected", false);
  ASSERT_EQ(printed.code, 0);
  ASSERT_EQ(corrected.code, 0);
  EXPECT_NE(printed.out, corrected.out);
  EXPECT_NE(run("gait cycle --config " + cfg + " --mode sideways").code, 0);
}

TEST(Cli, TrialRunCsv) {
  const Result r = run("trial run --field 35 --freq 1 --replicates 2 --cap 600", false);
  ASSERT_EQ(r.code, 0);
  std::istringstream in(r.out);
  std::string line;
  int rows = 0;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("replicate,status,lifetime_s", 0), 0u);
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_NE(line.find("Complete,600"), std::string::npos) << line;
  }
  EXPECT_EQ(rows, 2);
  EXPECT_NE(run("trial run --field -3 --freq 1").code, 0);
}

TEST(Cli, RigDemoWalksThroughModes) {
  const Result r = run("rig demo");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* k : {"hv-zeroed", "rotary-moved", "clamp-converged", "hv-isolated", "impedance-sweep"}) {
    EXPECT_NE(r.out.find(k), std::string::npos) << k;
  }
}
