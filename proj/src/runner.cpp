#include "dealab/runner.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>

#include "dealab/errors.hpp"
#include "dealab/rng.hpp"

namespace dealab::campaign {

namespace fs = std::filesystem;

namespace {

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ValidationError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Json cell_json(const Cell& c) {
  return Json{{"field", c.point.field},
              {"freq", c.point.freq},
              {"filler", std::string(device::to_string(c.material.filler))},
              {"cnt_conc", c.material.cnt_conc}};
}

std::string cell_key(int stage, const Cell& c) { return "s" + std::to_string(stage) + " " + cell_label(c); }

int state_rank(const std::string& s) {
  if (s == "pending") return 0;
  if (s == "running") return 1;
  return 2;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void Manifest::validate() const {
  if (schema_version != kSchemaVersion) {
    throw ValidationError("unsupported manifest schema_version " + std::to_string(schema_version));
  }
  space.validate();
  protocol.validate();
  device.validate();
  if (channels < 1 || channels > 16) throw ValidationError("channels must be in [1, 16]");
  if (max_stage < 1 || max_stage > 3) throw ValidationError("max_stage must be 1, 2 or 3");
  if (!(telemetry_log_hz > 0.0)) throw ValidationError("telemetry_log_hz must be > 0");
  if (!(flush_interval_s > 0.0)) throw ValidationError("flush_interval_s must be > 0");
  if (!(duty > 0.0 && duty < 1.0)) throw ValidationError("duty must be in (0, 1)");
  if (boundary.floor_s < 0.0) throw ValidationError("boundary floor must be >= 0");
  if (protocol.lifetime.cap != space.lifetime_cap) throw ValidationError("protocol cap differs from lifetime_cap");
  const auto known = device::Calibration::defaults().to_config();
  for (const auto& [key, value] : calibration_overrides) {
    if (!known.contains(key)) throw ValidationError("unknown calibration key '" + key + "'");
  }
}

device::Calibration Manifest::calibration() const {
  KeyValueConfig cfg =
      calibration_file.empty() ? device::Calibration::defaults().to_config() : KeyValueConfig::load(calibration_file);
  for (const auto& [key, value] : calibration_overrides) cfg.set(key, value);
  return device::Calibration::from_config(cfg);
}

Json Manifest::to_json() const {
  Json fillers = Json::array();
  for (auto f : space.fillers) fillers.push_back(std::string(device::to_string(f)));
  Json overrides = Json::object();
  for (const auto& [k, v] : calibration_overrides) overrides[k] = v;
  return Json{
      {"schema_version", schema_version},
      {"name", name},
      {"seed", seed},
      {"space",
       {{"fields", space.fields},
        {"frequencies", space.frequencies},
        {"fillers", fillers},
        {"cnt_concs", space.cnt_concs},
        {"replicates_per_cell", space.replicates_per_cell},
        {"lifetime_cap_s", space.lifetime_cap}}},
      {"protocol",
       {{"sample_rate_hz", protocol.sample_rate_hz},
        {"threshold", protocol.lifetime.threshold},
        {"init_window", protocol.lifetime.init_window},
        {"median_window", protocol.lifetime.median_window},
        {"persistence", protocol.lifetime.persistence},
        {"initial_estimator",
         protocol.lifetime.estimator == analysis::InitialEstimator::TheilSen ? "theil-sen" : "median"},
        {"pre_sweep", protocol.pre_sweep},
        {"post_sweep", protocol.post_sweep},
        {"force_check_interval_s", protocol.force_check_interval_s},
        {"force_check_duration_s", protocol.force_check_duration_s},
        {"bias_force_n", protocol.bias_force_n},
        {"stop_on_threshold", protocol.stop_on_threshold},
        {"average_window", protocol.average_window == rig::AverageWindow::Lifetime ? "lifetime" : "whole-trial"}}},
      {"boundary", {{"floor_s", boundary.floor_s}, {"frequencies", boundary.frequencies}}},
      {"device",
       {{"active_layers", device.active_layers},
        {"layer_thickness_um", device.layer_thickness_um},
        {"active_length_mm", device.active_length_mm},
        {"electrode_width_mm", device.electrode_width_mm},
        {"reinforced", device.reinforced},
        {"mass_g", device.mass_g}}},
      {"duty", duty},
      {"channels", channels},
      {"max_stage", max_stage},
      {"telemetry_log_hz", telemetry_log_hz},
      {"flush_interval_s", flush_interval_s},
      {"calibration", {{"file", calibration_file}, {"overrides", overrides}}},
  };
}

Manifest Manifest::from_json(const Json& j, const fs::path& base_dir) {
  Manifest m;
  try {
    check_keys(j,
               {"schema_version", "name", "seed", "space", "protocol", "boundary", "device", "duty", "channels",
                "max_stage", "telemetry_log_hz", "flush_interval_s", "calibration", "run_epoch"},
               "manifest");
    if (!j.contains("schema_version")) throw ValidationError("manifest needs schema_version");
    read(j, "schema_version", m.schema_version);
    read(j, "name", m.name);
    read(j, "seed", m.seed);
    read(j, "duty", m.duty);
    read(j, "channels", m.channels);
    read(j, "max_stage", m.max_stage);
    read(j, "telemetry_log_hz", m.telemetry_log_hz);
    read(j, "flush_interval_s", m.flush_interval_s);
    if (j.contains("space")) {
      const auto& s = j.at("space");
      check_keys(s, {"fields", "frequencies", "fillers", "cnt_concs", "replicates_per_cell", "lifetime_cap_s"}, "space");
      read(s, "fields", m.space.fields);
      read(s, "frequencies", m.space.frequencies);
      if (s.contains("fillers")) {
        m.space.fillers.clear();
        for (const auto& f : s.at("fillers")) m.space.fillers.push_back(device::parse_filler(f.get<std::string>()));
      }
      read(s, "cnt_concs", m.space.cnt_concs);
      read(s, "replicates_per_cell", m.space.replicates_per_cell);
      read(s, "lifetime_cap_s", m.space.lifetime_cap);
    }
    m.protocol.lifetime.cap = m.space.lifetime_cap;
    if (j.contains("protocol")) {
      const auto& p = j.at("protocol");
      check_keys(p,
                 {"sample_rate_hz", "threshold", "init_window", "median_window", "persistence", "initial_estimator",
                  "pre_sweep", "post_sweep", "force_check_interval_s", "force_check_duration_s", "bias_force_n",
                  "stop_on_threshold", "average_window"},
                 "protocol");
      read(p, "sample_rate_hz", m.protocol.sample_rate_hz);
      read(p, "threshold", m.protocol.lifetime.threshold);
      read(p, "init_window", m.protocol.lifetime.init_window);
      read(p, "median_window", m.protocol.lifetime.median_window);
      read(p, "persistence", m.protocol.lifetime.persistence);
      if (p.contains("initial_estimator")) {
        const auto e = p.at("initial_estimator").get<std::string>();
        if (e == "theil-sen") {
          m.protocol.lifetime.estimator = analysis::InitialEstimator::TheilSen;
        } else if (e == "median") {
          m.protocol.lifetime.estimator = analysis::InitialEstimator::Median;
        } else {
          throw ValidationError("initial_estimator must be theil-sen or median");
        }
      }
      read(p, "pre_sweep", m.protocol.pre_sweep);
      read(p, "post_sweep", m.protocol.post_sweep);
      read(p, "force_check_interval_s", m.protocol.force_check_interval_s);
      read(p, "force_check_duration_s", m.protocol.force_check_duration_s);
      read(p, "bias_force_n", m.protocol.bias_force_n);
      read(p, "stop_on_threshold", m.protocol.stop_on_threshold);
      if (p.contains("average_window")) {
        const auto w = p.at("average_window").get<std::string>();
        if (w == "lifetime") {
          m.protocol.average_window = rig::AverageWindow::Lifetime;
        } else if (w == "whole-trial") {
          m.protocol.average_window = rig::AverageWindow::WholeTrial;
        } else {
          throw ValidationError("average_window must be lifetime or whole-trial");
        }
      }
    }
    if (j.contains("boundary")) {
      const auto& b = j.at("boundary");
      check_keys(b, {"floor_s", "frequencies"}, "boundary");
      read(b, "floor_s", m.boundary.floor_s);
      read(b, "frequencies", m.boundary.frequencies);
    }
    if (j.contains("device")) {
      const auto& d = j.at("device");
      check_keys(d,
                 {"active_layers", "layer_thickness_um", "active_length_mm", "electrode_width_mm", "reinforced",
                  "mass_g"},
                 "device");
      read(d, "active_layers", m.device.active_layers);
      read(d, "layer_thickness_um", m.device.layer_thickness_um);
      read(d, "active_length_mm", m.device.active_length_mm);
      read(d, "electrode_width_mm", m.device.electrode_width_mm);
      read(d, "reinforced", m.device.reinforced);
      read(d, "mass_g", m.device.mass_g);
    }
    if (j.contains("calibration")) {
      const auto& c = j.at("calibration");
      check_keys(c, {"file", "overrides"}, "calibration");
      read(c, "file", m.calibration_file);
      if (!m.calibration_file.empty() && fs::path(m.calibration_file).is_relative() && !base_dir.empty()) {
        m.calibration_file = (base_dir / m.calibration_file).lexically_normal().string();
      }
      if (c.contains("overrides")) {
        for (const auto& [k, v] : c.at("overrides").items()) {
          m.calibration_overrides[k] = v.is_string() ? v.get<std::string>() : v.dump();
        }
      }
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

Manifest Manifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ValidationError("manifest " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

TrialSeeds trial_seeds(std::uint64_t campaign_seed, const PlannedTrial& t) {
  return {derive_seed(campaign_seed, fnv1a(t.device_id)),
          derive_seed(derive_seed(campaign_seed, 0x6661696c75726531ULL), static_cast<std::uint64_t>(t.replicate))};
}

CampaignRunner::CampaignRunner(Manifest manifest, fs::path run_dir, std::vector<rig::Station*> stations,
                               RunOptions opts)
    : manifest_(std::move(manifest)), run_dir_(std::move(run_dir)), stations_(std::move(stations)),
      opts_(std::move(opts)) {
  manifest_.validate();
  if (stations_.empty()) throw ValidationError("campaign needs at least one station");
}

void CampaignRunner::progress(std::string kind, Json data) {
  if (!opts_.on_progress) return;
  std::lock_guard lock(progress_mu_);
  opts_.on_progress(ProgressEvent{std::move(kind), std::move(data)});
}

void CampaignRunner::set_cell_state(int stage, const Cell& cell, const std::string& state) {
  bool completed_now = false;
  {
    std::lock_guard lock(status_mu_);
    auto& c = cells_[cell_key(stage, cell)];
    if (c.is_null()) c = Json{{"stage", stage}, {"cell", cell_json(cell)}, {"state", "pending"}};
    const auto current = c.at("state").get<std::string>();
    if (state_rank(state) <= state_rank(current)) return;
    c["state"] = state;
    completed_now = state_rank(state) == 2;
  }
  if (completed_now) progress("cell-completed", Json{{"stage", stage}, {"cell", cell_json(cell)}, {"state", state}});
}

Json CampaignRunner::status() const {
  std::lock_guard lock(status_mu_);
  Json cells = Json::array();
  for (const auto& [k, v] : cells_) cells.push_back(v);
  Json running = Json::array();
  for (const auto& [ch, id] : running_) running.push_back(Json{{"channel", ch}, {"device_id", id}});
  Json boundary = Json::array();
  for (const auto& p : boundary_) boundary.push_back(Json{{"field", p.field}, {"freq", p.freq}});
  return Json{{"schema_version", kSchemaVersion},
              {"name", manifest_.name},
              {"phase", phase_},
              {"error", error_},
              {"trials_done", trials_done_},
              {"running", running},
              {"boundary", boundary},
              {"cells", cells}};
}

TrialRecord CampaignRunner::run_one(rig::Station& st, const PlannedTrial& t) {
  auto& ch = st.channel();
  if (ch.mode() == rig::ChannelMode::Faulted) ch.reset_fault();
  if (ch.mode() != rig::ChannelMode::Idle) ch.park();

  device::DeviceSpec spec = manifest_.device;
  spec.material = t.cell.material;
  const auto seeds = trial_seeds(manifest_.seed, t);
  st.backend().mount(spec, seeds.device, seeds.failure);
  st.abort_flag() = false;
  st.set_current_trial(t.device_id);
  {
    std::lock_guard lock(status_mu_);
    running_[st.id()] = t.device_id;
  }
  set_cell_state(t.stage, t.cell, "running");
  progress("trial-started",
           Json{{"device_id", t.device_id}, {"channel", st.id()}, {"stage", t.stage}, {"cell", cell_json(t.cell)}});

  std::size_t first = 0;
  std::size_t last = 0;
  const double interval = 1.0 / manifest_.telemetry_log_hz;
  const double trip = ch.config().current_trip_ua;
  double next_log = 0.0;
  const auto listener = st.add_telemetry_listener([&](const rig::TelemetrySample& s) {
    if (s.mode == rig::ChannelMode::ActuatingDisplacement && s.current <= trip) {
      if (s.t < next_log) return;
      next_log = (std::floor(s.t / interval) + 1.0) * interval;
    }
    try {
      last = store_->append_telemetry(st.id(), s);
    } catch (const StorageError& e) {
      throw rig::AdapterError(rig::AdapterFault::Storage, e.what());
    }
    if (first == 0) first = last;
  });

  rig::TrialRequest req;
  req.field = t.cell.point.field;
  req.frequency = t.cell.point.freq;
  req.duty = manifest_.duty;
  req.layer_thickness_um = spec.layer_thickness_um;
  req.protocol = manifest_.protocol;

  rig::TrialOutcome out;
  try {
    out = ch.run_trial(req, &st.abort_flag());
  } catch (...) {
    st.remove_listener(listener);
    st.set_current_trial(std::nullopt);
    throw;
  }
  st.remove_listener(listener);
  store_->flush_telemetry(st.id());
  st.backend().unmount();
  st.set_current_trial(std::nullopt);

  TrialRecord r;
  r.stage = t.stage;
  r.cell = t.cell;
  r.replicate = t.replicate;
  r.device_id = t.device_id;
  r.channel = st.id();
  r.seed = seeds.device;
  r.status = out.status;
  r.lifetime = out.lifetime;
  r.avg_displacement = out.avg_displacement;
  r.capacitance_degradation = out.capacitance_degradation;
  if (first > 0) r.telemetry_ref = store::format_ref({store::RunDirectory::telemetry_file(st.id()), first, last});
  if (out.status == rig::TrialStatus::Faulted) {
    r.note = out.fault_reason;
    ch.reset_fault();
  } else if (out.status == rig::TrialStatus::Aborted) {
    r.note = "aborted by operator";
  }

  {
    std::lock_guard lock(status_mu_);
    running_.erase(st.id());
    ++trials_done_;
  }
  progress("trial-ended", Json{{"device_id", r.device_id},
                               {"channel", r.channel},
                               {"stage", r.stage},
                               {"cell", cell_json(r.cell)},
                               {"status", std::string(rig::to_string(r.status))},
                               {"lifetime_s", r.lifetime.lifetime},
                               {"censored", r.lifetime.censored},
                               {"avg_displacement_mm", r.avg_displacement}});
  return r;
}

std::vector<TrialRecord> CampaignRunner::run_wave(const std::vector<PlannedTrial>& wave) {
  std::vector<std::optional<TrialRecord>> slots(wave.size());
  std::vector<std::future<void>> futures;
  const std::size_t n = stations_.size();
  for (std::size_t s = 0; s < n; ++s) {
    futures.push_back(stations_[s]->submit([this, &wave, &slots, s, n](rig::Station& st) {
      for (std::size_t i = s; i < wave.size(); i += n) {
        if (cancelled()) return;
        slots[i] = run_one(st, wave[i]);
      }
    }));
  }
  std::exception_ptr err;
  for (auto& f : futures) {
    try {
      f.get();
    } catch (...) {
      if (!err) err = std::current_exception();
    }
  }
  std::vector<TrialRecord> out;
  for (auto& s : slots) {
    if (s) {
      store_->write_trial(*s);
      out.push_back(std::move(*s));
    }
  }
  if (err) std::rethrow_exception(err);
  return out;
}

CampaignReport CampaignRunner::run() {
  Json manifest_json = manifest_.to_json();
  manifest_json["run_epoch"] = utc_now();
  store_ = std::make_unique<store::RunDirectory>(run_dir_, manifest_json, manifest_.flush_interval_s);
  const auto set_phase = [this](const std::string& p) {
    std::lock_guard lock(status_mu_);
    phase_ = p;
  };
  try {
    const auto& space = manifest_.space;
    set_phase("stage1");
    progress("stage-started", Json{{"stage", 1}});
    for (auto plan = plan_stage1(space, records_); !plan.empty(); plan = plan_stage1(space, records_)) {
      for (const auto& t : plan) set_cell_state(1, t.cell, "pending");
      auto recs = run_wave(plan);
      records_.insert(records_.end(), recs.begin(), recs.end());
      if (cancelled()) throw std::runtime_error("campaign cancelled");
      const auto next = plan_stage1(space, records_);
      for (const auto& s : summarize(records_, 1)) {
        const bool more = std::any_of(next.begin(), next.end(), [&](const auto& t) { return t.cell == s.cell; });
        if (!more) set_cell_state(1, s.cell, s.stable ? "stable" : "completed");
      }
    }

    const auto boundary = select_boundary(summarize(records_, 1), space, manifest_.boundary);
    {
      std::lock_guard lock(status_mu_);
      boundary_ = boundary;
    }
    Json bj = Json::array();
    for (const auto& p : boundary) bj.push_back(Json{{"field", p.field}, {"freq", p.freq}});
    progress("boundary-selected", Json{{"boundary", bj}});

    std::vector<MaterialSelection> selections;
    for (int stage = 2; stage <= manifest_.max_stage; ++stage) {
      set_phase("stage" + std::to_string(stage));
      const auto plan = stage == 2 ? plan_stage2(boundary, space) : plan_stage3(selections, space);
      progress("stage-started", Json{{"stage", stage}, {"trials", plan.size()}});
      for (const auto& t : plan) set_cell_state(stage, t.cell, "pending");
      auto recs = run_wave(plan);
      records_.insert(records_.end(), recs.begin(), recs.end());
      if (cancelled()) throw std::runtime_error("campaign cancelled");
      for (const auto& s : summarize(records_, stage)) set_cell_state(stage, s.cell, "completed");
      if (stage == 2) {
        selections = select_best_material(summarize(records_, 2), boundary);
        Json sj = Json::array();
        for (const auto& s : selections) {
          sj.push_back(Json{{"field", s.point.field},
                            {"freq", s.point.freq},
                            {"lifetime_best", device::to_string(s.lifetime_best)},
                            {"displacement_best", device::to_string(s.displacement_best)},
                            {"stage3", s.stage3 ? Json(device::to_string(*s.stage3)) : Json(nullptr)}});
        }
        progress("materials-selected", Json{{"selections", sj}});
      }
    }

    CampaignReport report = manifest_.max_stage >= 2 ? compile_report(records_, boundary, selections)
                                                     : compile_report(records_, {}, {});
    report.boundary = boundary;
    report.name = manifest_.name;
    report.seed = manifest_.seed;
    store_->write_report(report);
    store_->close();
    set_phase("completed");
    progress("campaign-completed", Json{{"trials", records_.size()}});
    return report;
  } catch (const std::exception& e) {
    {
      std::lock_guard lock(status_mu_);
      phase_ = cancelled() ? "cancelled" : "failed";
      error_ = e.what();
    }
    try {
      store_->close();
    } catch (...) {
    }
    progress("campaign-failed", Json{{"error", e.what()}});
    throw;
  }
}

CampaignReport run_campaign(const Manifest& manifest, const fs::path& run_dir, double accel, RunOptions opts) {
  const auto cal = manifest.calibration();
  std::vector<std::unique_ptr<rig::Station>> owned;
  std::vector<rig::Station*> stations;
  for (int i = 0; i < manifest.channels; ++i) {
    owned.push_back(std::make_unique<rig::Station>(i, cal));
    owned.back()->set_pacing(accel);
    stations.push_back(owned.back().get());
  }
  CampaignRunner runner(manifest, run_dir, stations, std::move(opts));
  return runner.run();
}

}  // namespace dealab::campaign
