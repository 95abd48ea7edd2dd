#include "dealab/store.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dealab/errors.hpp"

namespace dealab::store {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& s, const char* what) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw StorageError(std::string("bad ") + what + " '" + s + "'");
  return v;
}

long long to_int(const std::string& s, const char* what) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw StorageError(std::string("bad ") + what + " '" + s + "'");
  return v;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw StorageError("unterminated quote in CSV line");
  out.push_back(std::move(cur));
  return out;
}

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> opt_from(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

Json material_json(const device::MaterialConfig& m) {
  return Json{{"filler", std::string(device::to_string(m.filler))}, {"cnt_conc", m.cnt_conc}};
}

device::MaterialConfig material_from(const Json& j) {
  return {device::parse_filler(j.at("filler").get<std::string>()), j.at("cnt_conc").get<double>()};
}

Json point_json(const campaign::OperatingPoint& p) { return Json{{"field", p.field}, {"freq", p.freq}}; }

campaign::OperatingPoint point_from(const Json& j) { return {j.at("field").get<double>(), j.at("freq").get<double>()}; }

Json row_json(const campaign::ComparisonRow& r) {
  return Json{{"role", r.role},
              {"material", material_json(r.material)},
              {"stage", r.stage},
              {"lifetime_mean_s", r.lifetime_mean},
              {"displacement_mean_mm", r.displacement_mean}};
}

campaign::ComparisonRow row_from(const Json& j) {
  return {j.at("role").get<std::string>(), material_from(j.at("material")), j.at("stage").get<int>(),
          j.at("lifetime_mean_s").get<double>(), j.at("displacement_mean_mm").get<double>()};
}

Json opt_material(const std::optional<device::MaterialConfig>& m) { return m ? material_json(*m) : Json(nullptr); }

std::optional<device::MaterialConfig> opt_material_from(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return material_from(j);
}

void write_file(const fs::path& p, const std::string& content) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw StorageError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) throw StorageError("cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace

Json sample_to_json(const rig::TelemetrySample& s) {
  return Json{{"t_s", s.t},
              {"channel", s.channel},
              {"mode", std::string(rig::to_string(s.mode))},
              {"voltage_v", s.voltage},
              {"current_ua", s.current},
              {"displacement_mm", opt(s.displacement)},
              {"force_n", opt(s.force)},
              {"clamp_force_n", s.clamp_force},
              {"hv_isolated", s.hv_isolated}};
}

rig::TelemetrySample sample_from_json(const Json& j) {
  try {
    rig::TelemetrySample s;
    s.t = j.at("t_s").get<double>();
    s.channel = j.at("channel").get<int>();
    s.mode = rig::parse_channel_mode(j.at("mode").get<std::string>());
    s.voltage = j.at("voltage_v").get<double>();
    s.current = j.at("current_ua").get<double>();
    s.displacement = opt_from(j.at("displacement_mm"));
    s.force = opt_from(j.at("force_n"));
    s.clamp_force = j.at("clamp_force_n").get<double>();
    s.hv_isolated = j.at("hv_isolated").get<bool>();
    return s;
  } catch (const Json::exception& e) {
    throw StorageError(std::string("bad telemetry record: ") + e.what());
  } catch (const ValidationError& e) {
    throw StorageError(std::string("bad telemetry record: ") + e.what());
  }
}

std::string encode_sample(const rig::TelemetrySample& s) { return sample_to_json(s).dump(); }

rig::TelemetrySample decode_sample(std::string_view line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::exception& e) {
    throw StorageError(std::string("bad telemetry line: ") + e.what());
  }
  return sample_from_json(j);
}

TelemetryLog load_telemetry(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();

  TelemetryLog log;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < data.size()) {
    const auto nl = data.find('\n', pos);
    if (nl == std::string::npos) {
      log.partial_tail = true;
      break;
    }
    ++line_no;
    const std::string_view line(data.data() + pos, nl - pos);
    try {
      log.samples.push_back(decode_sample(line));
    } catch (const StorageError& e) {
      throw StorageError(path.filename().string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    pos = nl + 1;
  }
  return log;
}

TelemetryWriter::TelemetryWriter(fs::path path, double flush_interval_s)
    : path_(std::move(path)), interval_(flush_interval_s) {
  if (std::ifstream existing{path_, std::ios::binary}) {
    for (std::string l; std::getline(existing, l);) ++lines_;
  }
  file_ = std::fopen(path_.c_str(), "ab");
  if (!file_) throw StorageError("cannot open " + path_.string() + ": " + std::strerror(errno));
}

TelemetryWriter::~TelemetryWriter() {
  if (file_) std::fclose(file_);
}

std::size_t TelemetryWriter::append(const rig::TelemetrySample& s) {
  if (!file_) throw StorageError("telemetry log " + path_.filename().string() + " is closed");
  std::string line = encode_sample(s);
  line += '\n';
  if (std::fwrite(line.data(), 1, line.size(), file_) != line.size()) {
    throw StorageError("write failed for " + path_.string());
  }
  ++lines_;
  if (s.t - last_flush_t_ >= interval_ || s.t < last_flush_t_) {
    flush();
    last_flush_t_ = s.t;
  }
  return lines_;
}

void TelemetryWriter::flush() {
  if (file_ && std::fflush(file_) != 0) throw StorageError("flush failed for " + path_.string());
}

void TelemetryWriter::close() {
  if (!file_) return;
  const int rc = std::fclose(file_);
  file_ = nullptr;
  if (rc != 0) throw StorageError("close failed for " + path_.string());
}

std::string format_ref(const TelemetryRef& r) {
  return r.file + "#L" + std::to_string(r.first_line) + "-L" + std::to_string(r.last_line);
}

TelemetryRef parse_ref(std::string_view s) {
  const auto hash = s.find("#L");
  const auto dash = s.find("-L", hash == std::string_view::npos ? 0 : hash);
  if (hash == std::string_view::npos || dash == std::string_view::npos) {
    throw StorageError("bad telemetry ref '" + std::string(s) + "'");
  }
  TelemetryRef r;
  r.file = std::string(s.substr(0, hash));
  r.first_line = static_cast<std::size_t>(to_int(std::string(s.substr(hash + 2, dash - hash - 2)), "ref line"));
  r.last_line = static_cast<std::size_t>(to_int(std::string(s.substr(dash + 2)), "ref line"));
  if (r.file.empty() || r.first_line < 1 || r.last_line < r.first_line) {
    throw StorageError("bad telemetry ref '" + std::string(s) + "'");
  }
  return r;
}

std::vector<rig::TelemetrySample> read_ref(const fs::path& run_dir, std::string_view ref) {
  const auto r = parse_ref(ref);
  const fs::path file = (run_dir / r.file).lexically_normal();
  const auto rel = file.lexically_relative(run_dir.lexically_normal());
  if (rel.empty() || *rel.begin() == "..") throw StorageError("telemetry ref escapes the run directory");
  const auto log = load_telemetry(file);
  if (r.last_line > log.samples.size()) throw StorageError("telemetry ref past end of " + r.file);
  return {log.samples.begin() + static_cast<std::ptrdiff_t>(r.first_line - 1),
          log.samples.begin() + static_cast<std::ptrdiff_t>(r.last_line)};
}

const std::string& trial_csv_header() {
  static const std::string h =
      "stage,device_id,replicate,channel,field_v_per_um,freq_hz,filler,cnt_ml_per_fa,seed,status,lifetime_s,"
      "censored,cause,initial_amplitude_mm,avg_displacement_mm,capacitance_degradation,telemetry_ref,note";
  return h;
}

std::string encode_trial(const campaign::TrialRecord& r) {
  std::string s;
  s += std::to_string(r.stage) + ",";
  s += csv_field(r.device_id) + ",";
  s += std::to_string(r.replicate) + ",";
  s += std::to_string(r.channel) + ",";
  s += fmt(r.cell.point.field) + ",";
  s += fmt(r.cell.point.freq) + ",";
  s += std::string(device::to_string(r.cell.material.filler)) + ",";
  s += fmt(r.cell.material.cnt_conc) + ",";
  s += std::to_string(r.seed) + ",";
  s += std::string(rig::to_string(r.status)) + ",";
  s += fmt(r.lifetime.lifetime) + ",";
  s += std::string(r.lifetime.censored ? "true" : "false") + ",";
  s += std::string(analysis::to_string(r.lifetime.cause)) + ",";
  s += fmt(r.lifetime.initial_amplitude) + ",";
  s += fmt(r.avg_displacement) + ",";
  s += (r.capacitance_degradation ? fmt(*r.capacitance_degradation) : std::string()) + ",";
  s += csv_field(r.telemetry_ref) + ",";
  s += csv_field(r.note);
  return s;
}

campaign::TrialRecord decode_trial(std::string_view line) {
  const auto f = split_csv(line);
  if (f.size() != 18) throw StorageError("trial row has " + std::to_string(f.size()) + " fields, expected 18");
  campaign::TrialRecord r;
  try {
    r.stage = static_cast<int>(to_int(f[0], "stage"));
    r.device_id = f[1];
    r.replicate = static_cast<int>(to_int(f[2], "replicate"));
    r.channel = static_cast<int>(to_int(f[3], "channel"));
    r.cell.point.field = to_double(f[4], "field");
    r.cell.point.freq = to_double(f[5], "freq");
    r.cell.material.filler = device::parse_filler(f[6]);
    r.cell.material.cnt_conc = to_double(f[7], "cnt");
    {
      std::uint64_t seed = 0;
      const auto res = std::from_chars(f[8].data(), f[8].data() + f[8].size(), seed);
      if (res.ec != std::errc() || res.ptr != f[8].data() + f[8].size()) throw StorageError("bad seed '" + f[8] + "'");
      r.seed = seed;
    }
    r.status = rig::parse_trial_status(f[9]);
    r.lifetime.lifetime = to_double(f[10], "lifetime");
    if (f[11] != "true" && f[11] != "false") throw StorageError("bad censored flag '" + f[11] + "'");
    r.lifetime.censored = f[11] == "true";
    r.lifetime.cause = analysis::parse_terminal_cause(f[12]);
    r.lifetime.initial_amplitude = to_double(f[13], "initial amplitude");
    r.avg_displacement = to_double(f[14], "avg displacement");
    if (!f[15].empty()) r.capacitance_degradation = to_double(f[15], "capacitance degradation");
    r.telemetry_ref = f[16];
    r.note = f[17];
  } catch (const ValidationError& e) {
    throw StorageError(std::string("bad trial row: ") + e.what());
  }
  return r;
}

std::vector<campaign::TrialRecord> load_trials(const fs::path& csv) {
  std::ifstream in(csv, std::ios::binary);
  if (!in) throw StorageError("cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line) || line != trial_csv_header()) throw StorageError("unexpected trials.csv header");
  std::vector<campaign::TrialRecord> out;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(decode_trial(line));
  }
  return out;
}

Json report_to_json(const campaign::CampaignReport& r) {
  Json cells = Json::array();
  for (const auto& c : r.cells) {
    cells.push_back(Json{{"stage", c.stage},
                         {"point", point_json(c.cell.point)},
                         {"material", material_json(c.cell.material)},
                         {"trials", c.trials},
                         {"completed", c.completed},
                         {"censored", c.censored},
                         {"stable", c.stable},
                         {"lifetime_mean_s", c.lifetime_mean},
                         {"lifetime_std_s", c.lifetime_std},
                         {"displacement_mean_mm", c.displacement_mean},
                         {"displacement_std_mm", c.displacement_std}});
  }
  Json boundary = Json::array();
  for (const auto& p : r.boundary) boundary.push_back(point_json(p));
  Json selections = Json::array();
  for (const auto& s : r.selections) {
    selections.push_back(Json{{"point", point_json(s.point)},
                              {"lifetime_best", material_json(s.lifetime_best)},
                              {"displacement_best", material_json(s.displacement_best)},
                              {"stage3", opt_material(s.stage3)}});
  }
  Json comparisons = Json::array();
  for (const auto& c : r.comparisons) {
    comparisons.push_back(Json{{"point", point_json(c.point)},
                               {"best", row_json(c.best)},
                               {"baseline", row_json(c.baseline)},
                               {"worst", row_json(c.worst)},
                               {"lifetime_gain_vs_baseline_pct", c.lifetime_gain_vs_baseline_pct},
                               {"lifetime_gain_vs_worst_pct", c.lifetime_gain_vs_worst_pct},
                               {"displacement_delta_vs_baseline_pct", c.displacement_delta_vs_baseline_pct},
                               {"displacement_delta_vs_worst_pct", c.displacement_delta_vs_worst_pct},
                               {"stage3", opt_material(c.stage3)}});
  }
  return Json{{"schema_version", r.schema_version},
              {"name", r.name},
              {"seed", r.seed},
              {"trials", r.trials},
              {"cells", cells},
              {"boundary", boundary},
              {"selections", selections},
              {"comparisons", comparisons}};
}

campaign::CampaignReport report_from_json(const Json& j) {
  try {
    campaign::CampaignReport r;
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != campaign::kSchemaVersion) {
      throw StorageError("unsupported report schema_version " + std::to_string(r.schema_version));
    }
    r.name = j.at("name").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.trials = j.at("trials").get<std::size_t>();
    for (const auto& c : j.at("cells")) {
      campaign::CellSummary s;
      s.stage = c.at("stage").get<int>();
      s.cell = {point_from(c.at("point")), material_from(c.at("material"))};
      s.trials = c.at("trials").get<int>();
      s.completed = c.at("completed").get<int>();
      s.censored = c.at("censored").get<int>();
      s.stable = c.at("stable").get<bool>();
      s.lifetime_mean = c.at("lifetime_mean_s").get<double>();
      s.lifetime_std = c.at("lifetime_std_s").get<double>();
      s.displacement_mean = c.at("displacement_mean_mm").get<double>();
      s.displacement_std = c.at("displacement_std_mm").get<double>();
      r.cells.push_back(s);
    }
    for (const auto& p : j.at("boundary")) r.boundary.push_back(point_from(p));
    for (const auto& s : j.at("selections")) {
      r.selections.push_back({point_from(s.at("point")), material_from(s.at("lifetime_best")),
                              material_from(s.at("displacement_best")), opt_material_from(s.at("stage3"))});
    }
    for (const auto& c : j.at("comparisons")) {
      campaign::BoundaryComparison b;
      b.point = point_from(c.at("point"));
      b.best = row_from(c.at("best"));
      b.baseline = row_from(c.at("baseline"));
      b.worst = row_from(c.at("worst"));
      b.lifetime_gain_vs_baseline_pct = c.at("lifetime_gain_vs_baseline_pct").get<double>();
      b.lifetime_gain_vs_worst_pct = c.at("lifetime_gain_vs_worst_pct").get<double>();
      b.displacement_delta_vs_baseline_pct = c.at("displacement_delta_vs_baseline_pct").get<double>();
      b.displacement_delta_vs_worst_pct = c.at("displacement_delta_vs_worst_pct").get<double>();
      b.stage3 = opt_material_from(c.at("stage3"));
      r.comparisons.push_back(b);
    }
    return r;
  } catch (const Json::exception& e) {
    throw StorageError(std::string("bad report: ") + e.what());
  }
}

std::string report_csv(const campaign::CampaignReport& r) {
  std::string s =
      "field_v_per_um,freq_hz,best_filler,best_cnt,best_stage,best_lifetime_s,best_displacement_mm,"
      "baseline_filler,baseline_cnt,baseline_lifetime_s,baseline_displacement_mm,worst_filler,worst_cnt,"
      "worst_lifetime_s,worst_displacement_mm,lifetime_gain_vs_baseline_pct,lifetime_gain_vs_worst_pct,"
      "displacement_delta_vs_baseline_pct,displacement_delta_vs_worst_pct,stage3\n";
  const auto mat = [](const device::MaterialConfig& m) {
    return std::string(device::to_string(m.filler)) + "," + fmt(m.cnt_conc);
  };
  for (const auto& c : r.comparisons) {
    s += fmt(c.point.field) + "," + fmt(c.point.freq) + ",";
    s += mat(c.best.material) + "," + std::to_string(c.best.stage) + "," + fmt(c.best.lifetime_mean) + "," +
         fmt(c.best.displacement_mean) + ",";
    s += mat(c.baseline.material) + "," + fmt(c.baseline.lifetime_mean) + "," + fmt(c.baseline.displacement_mean) + ",";
    s += mat(c.worst.material) + "," + fmt(c.worst.lifetime_mean) + "," + fmt(c.worst.displacement_mean) + ",";
    s += fmt(c.lifetime_gain_vs_baseline_pct) + "," + fmt(c.lifetime_gain_vs_worst_pct) + ",";
    s += fmt(c.displacement_delta_vs_baseline_pct) + "," + fmt(c.displacement_delta_vs_worst_pct) + ",";
    s += c.stage3 ? csv_field(device::to_string(*c.stage3)) : std::string();
    s += "\n";
  }
  return s;
}

campaign::CampaignReport load_report(const fs::path& run_dir) {
  std::ifstream in(run_dir / "report.json", std::ios::binary);
  if (!in) throw StorageError("no report.json in " + run_dir.string());
  try {
    return report_from_json(Json::parse(in));
  } catch (const Json::exception& e) {
    throw StorageError(std::string("bad report.json: ") + e.what());
  }
}

RunDirectory::RunDirectory(fs::path dir, const Json& manifest, double flush_interval_s)
    : dir_(std::move(dir)), flush_interval_(flush_interval_s) {
  std::error_code ec;
  fs::create_directories(dir_ / "telemetry", ec);
  if (ec) throw StorageError("cannot create " + dir_.string() + ": " + ec.message());
  if (fs::exists(dir_ / "manifest.json")) throw StorageError("run directory " + dir_.string() + " already in use");
  write_file(dir_ / "manifest.json", manifest.dump(2) + "\n");
  write_file(dir_ / "trials.csv", trial_csv_header() + "\n");
}

RunDirectory::~RunDirectory() {
  try {
    close();
  } catch (...) {
  }
}

std::string RunDirectory::telemetry_file(int channel) { return "telemetry/ch" + std::to_string(channel) + ".jsonl"; }

TelemetryWriter& RunDirectory::writer(int channel) {
  std::lock_guard lock(writers_mu_);
  if (closed_) throw StorageError("run directory " + dir_.string() + " is closed");
  auto& w = writers_[channel];
  if (!w) w = std::make_unique<TelemetryWriter>(dir_ / telemetry_file(channel), flush_interval_);
  return *w;
}

std::size_t RunDirectory::append_telemetry(int channel, const rig::TelemetrySample& s) {
  return writer(channel).append(s);
}

void RunDirectory::flush_telemetry(int channel) { writer(channel).flush(); }

void RunDirectory::write_trial(const campaign::TrialRecord& r) {
  std::lock_guard lock(table_mu_);
  if (closed_) throw StorageError("run directory " + dir_.string() + " is closed");
  if (device_ids_.count(r.device_id)) throw StorageError("duplicate device_id '" + r.device_id + "'");
  std::ofstream out(dir_ / "trials.csv", std::ios::binary | std::ios::app);
  out << encode_trial(r) << "\n";
  if (!out.flush()) throw StorageError("cannot append to trials.csv");
  device_ids_.insert(r.device_id);
}

void RunDirectory::write_report(const campaign::CampaignReport& r) {
  std::lock_guard lock(table_mu_);
  write_file(dir_ / "report.json", report_to_json(r).dump(2) + "\n");
  write_file(dir_ / "report.csv", report_csv(r));
}

void RunDirectory::close() {
  std::lock_guard lock(writers_mu_);
  if (closed_) return;
  closed_ = true;
  for (auto& [ch, w] : writers_) w->close();
}

}  // namespace dealab::store
