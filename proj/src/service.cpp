#include "dealab/service.hpp"

#include <httplib.h>

#include <chrono>
#include <sstream>

#include "dealab/errors.hpp"

namespace dealab::service {

namespace fs = std::filesystem;

namespace {

Json sample_frame_data(const rig::TelemetrySample& s) { return store::sample_to_json(s); }

std::set<int> parse_channel_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const int v = std::stoi(item, &used);
    if (used != item.size()) throw ValidationError("bad channel '" + item + "'");
    out.insert(v);
  }
  return out;
}

bool safe_run_id(const std::string& id) {
  if (id.empty() || id == "." || id == "..") return false;
  for (char c : id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) return false;
  }
  return true;
}

Json outcome_json(const std::string& device_id, const rig::TrialOutcome& o) {
  return Json{{"device_id", device_id},
              {"status", std::string(rig::to_string(o.status))},
              {"lifetime_s", o.lifetime.lifetime},
              {"censored", o.lifetime.censored},
              {"cause", std::string(analysis::to_string(o.lifetime.cause))},
              {"initial_amplitude_mm", o.lifetime.initial_amplitude},
              {"avg_displacement_mm", o.avg_displacement},
              {"capacitance_degradation",
               o.capacitance_degradation ? Json(*o.capacitance_degradation) : Json(nullptr)},
              {"actuation_time_s", o.actuation_time},
              {"samples", o.samples},
              {"fault_reason", o.fault_reason}};
}

}  // namespace

Json frame(const std::string& type, double accel, Json data, std::optional<int> channel) {
  Json f{{"schema_version", campaign::kSchemaVersion},
         {"type", type},
         {"time_base", {{"clock", "simulated"}, {"accel", accel}}}};
  if (channel) f["channel"] = *channel;
  f["data"] = std::move(data);
  return f;
}

std::shared_ptr<Broadcaster::Subscriber> Broadcaster::subscribe(double rate_hz, std::set<int> channels) {
  if (!(rate_hz > 0.0)) throw ValidationError("stream rate must be > 0");
  auto sub = std::make_shared<Subscriber>();
  sub->rate_hz = rate_hz;
  sub->channels = std::move(channels);
  std::lock_guard lock(mu_);
  sub->id = next_id_++;
  subs_[sub->id] = sub;
  count_ = subs_.size();
  return sub;
}

void Broadcaster::unsubscribe(std::uint64_t id) {
  std::shared_ptr<Subscriber> sub;
  {
    std::lock_guard lock(mu_);
    auto it = subs_.find(id);
    if (it == subs_.end()) return;
    sub = it->second;
    subs_.erase(it);
    count_ = subs_.size();
  }
  std::lock_guard lock(sub->mu);
  sub->closed = true;
  sub->cv.notify_all();
}

bool Broadcaster::configure(std::uint64_t id, std::optional<double> rate_hz, std::optional<std::set<int>> channels) {
  if (rate_hz && !(*rate_hz > 0.0)) throw ValidationError("stream rate must be > 0");
  std::shared_ptr<Subscriber> sub;
  {
    std::lock_guard lock(mu_);
    auto it = subs_.find(id);
    if (it == subs_.end()) return false;
    sub = it->second;
  }
  std::lock_guard lock(sub->mu);
  if (rate_hz) {
    sub->rate_hz = *rate_hz;
    sub->next_t.clear();
  }
  if (channels) sub->channels = std::move(*channels);
  return true;
}

void Broadcaster::close_all() {
  std::map<std::uint64_t, std::shared_ptr<Subscriber>> subs;
  {
    std::lock_guard lock(mu_);
    subs.swap(subs_);
    count_ = 0;
  }
  for (auto& [id, sub] : subs) {
    std::lock_guard lock(sub->mu);
    sub->closed = true;
    sub->cv.notify_all();
  }
}

void Broadcaster::push(Subscriber& sub, std::string f, std::size_t max_queue) {
  sub.frames.push_back(std::move(f));
  while (sub.frames.size() > max_queue) {
    sub.frames.pop_front();
    ++sub.dropped;
  }
  sub.cv.notify_all();
}

void Broadcaster::publish_sample(const rig::TelemetrySample& s, double accel) {
  if (count_.load(std::memory_order_relaxed) == 0) return;
  std::vector<std::shared_ptr<Subscriber>> subs;
  {
    std::lock_guard lock(mu_);
    for (auto& [id, sub] : subs_) subs.push_back(sub);
  }
  std::optional<std::string> encoded;
  for (auto& sub : subs) {
    std::lock_guard lock(sub->mu);
    if (sub->closed || (!sub->channels.empty() && !sub->channels.count(s.channel))) continue;
    const double period = 1.0 / sub->rate_hz;
    auto last = sub->last_t.find(s.channel);
    const bool restarted = last != sub->last_t.end() && s.t < last->second;
    sub->last_t[s.channel] = s.t;
    auto next = sub->next_t.find(s.channel);
    if (next != sub->next_t.end() && !restarted) {
      if (s.t < next->second - 1e-9) continue;
      next->second += period;
      if (next->second <= s.t) next->second = s.t + period;
    } else {
      sub->next_t[s.channel] = s.t + period;
    }
    if (!encoded) encoded = frame("telemetry", accel, sample_frame_data(s), s.channel).dump();
    push(*sub, *encoded, max_queue_);
  }
}

void Broadcaster::publish(const Json& f, std::optional<int> channel) {
  std::vector<std::shared_ptr<Subscriber>> subs;
  {
    std::lock_guard lock(mu_);
    for (auto& [id, sub] : subs_) subs.push_back(sub);
  }
  const std::string encoded = f.dump();
  for (auto& sub : subs) {
    std::lock_guard lock(sub->mu);
    if (sub->closed) continue;
    if (channel && !sub->channels.empty() && !sub->channels.count(*channel)) continue;
    push(*sub, encoded, max_queue_);
  }
}

std::optional<std::string> Broadcaster::next(Subscriber& sub, int timeout_ms) {
  std::unique_lock lock(sub.mu);
  sub.cv.wait_for(lock, std::chrono::milliseconds(timeout_ms), [&] { return sub.closed || !sub.frames.empty(); });
  if (sub.frames.empty()) return std::nullopt;
  auto f = std::move(sub.frames.front());
  sub.frames.pop_front();
  return f;
}

std::size_t Broadcaster::subscribers() const { return count_.load(); }

Service::Service(ServiceConfig cfg) : cfg_(std::move(cfg)), broadcaster_(cfg_.max_queued_frames) {
  if (cfg_.channels < 1) throw ValidationError("service needs at least one channel");
  for (int i = 0; i < cfg_.channels; ++i) {
    auto st = std::make_unique<rig::Station>(i, cfg_.calibration);
    st->set_pacing(cfg_.accel);
    st->add_telemetry_listener([this](const rig::TelemetrySample& s) { broadcaster_.publish_sample(s, cfg_.accel); });
    st->add_event_listener([this](int ch, const rig::RigEvent& e) {
      broadcaster_.publish(frame("event", cfg_.accel, Json{{"t", e.t}, {"kind", e.kind}, {"detail", e.detail}}, ch),
                           ch);
    });
    stations_.push_back(std::move(st));
  }
}

Service::~Service() {
  {
    std::lock_guard lock(mu_);
    for (auto& [id, slot] : campaigns_) slot->cancel = true;
  }
  for (auto& st : stations_) st->abort_flag() = true;
  for (auto& [id, slot] : campaigns_) {
    if (slot->thread.joinable()) slot->thread.join();
  }
  broadcaster_.close_all();
  stations_.clear();
}

Service::Response Service::reject(int status, const std::string& reason) const {
  return {status, Json{{"schema_version", campaign::kSchemaVersion}, {"accepted", false}, {"reason", reason}}};
}

bool Service::campaign_active() const {
  for (const auto& [id, slot] : campaigns_) {
    if (!slot->done) return true;
  }
  return false;
}

Service::Response Service::start_campaign(const Json& manifest_json) {
  campaign::Manifest manifest;
  try {
    manifest = campaign::Manifest::from_json(manifest_json);
  } catch (const std::exception& e) {
    return reject(400, std::string("invalid manifest: ") + e.what());
  }
  if (manifest.channels > static_cast<int>(stations_.size())) {
    return reject(400, "manifest asks for " + std::to_string(manifest.channels) + " channels, service has " +
                           std::to_string(stations_.size()));
  }
  std::lock_guard lock(mu_);
  if (campaign_active()) return reject(409, "busy: a campaign is already running");
  for (const auto& st : stations_) {
    if (st->busy()) return reject(409, "busy: channel " + std::to_string(st->id()) + " is running a trial");
  }
  std::string id;
  do {
    id = "c" + std::to_string(next_campaign_++);
  } while (fs::exists(cfg_.data_dir / id));

  std::vector<rig::Station*> stations;
  for (int i = 0; i < manifest.channels; ++i) stations.push_back(stations_[static_cast<std::size_t>(i)].get());

  auto slot = std::make_unique<CampaignSlot>();
  slot->id = id;
  campaign::RunOptions opts;
  opts.cancel = &slot->cancel;
  opts.on_progress = [this, id](const campaign::ProgressEvent& ev) {
    Json data = ev.data;
    data["campaign"] = id;
    data["kind"] = ev.kind;
    broadcaster_.publish(frame("progress", cfg_.accel, std::move(data)));
  };
  try {
    slot->runner = std::make_unique<campaign::CampaignRunner>(manifest, cfg_.data_dir / id, stations, opts);
  } catch (const std::exception& e) {
    return reject(400, e.what());
  }
  Json plan = Json::array();
  for (const auto& t : slot->runner->stage1_preview()) {
    plan.push_back(Json{{"device_id", t.device_id},
                        {"field", t.cell.point.field},
                        {"freq", t.cell.point.freq},
                        {"replicate", t.replicate}});
  }
  auto* raw = slot.get();
  raw->thread = std::thread([raw] {
    try {
      raw->runner->run();
    } catch (...) {
    }
    raw->done = true;
  });
  campaigns_[id] = std::move(slot);
  return {201, Json{{"schema_version", campaign::kSchemaVersion},
                    {"accepted", true},
                    {"id", id},
                    {"run_id", id},
                    {"stage1_plan", plan}}};
}

Service::Response Service::campaign_status(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = campaigns_.find(id);
  if (it == campaigns_.end()) return reject(404, "unknown campaign '" + id + "'");
  Json body = it->second->runner->status();
  body["id"] = id;
  body["run_id"] = id;
  return {200, body};
}

Service::Response Service::campaign_command(const std::string& id, const Json& cmd) {
  std::lock_guard lock(mu_);
  auto it = campaigns_.find(id);
  if (it == campaigns_.end()) return reject(404, "unknown campaign '" + id + "'");
  const auto action = cmd.value("action", std::string());
  if (action != "Abort") return reject(400, "unsupported campaign action '" + action + "'");
  if (it->second->done) return reject(409, "campaign already finished");
  it->second->cancel = true;
  for (auto& st : stations_) st->abort_flag() = true;
  return {200, Json{{"schema_version", campaign::kSchemaVersion}, {"accepted", true}}};
}

Service::Response Service::channels() const {
  Json out = Json::array();
  std::lock_guard lock(mu_);
  for (const auto& st : stations_) {
    const auto s = st->status();
    Json c{{"id", s.id},
           {"mode", std::string(rig::to_string(s.mode))},
           {"busy", s.busy},
           {"current_trial", s.current_trial ? Json(*s.current_trial) : Json(nullptr)},
           {"interlock", {{"hv_isolated", s.interlock.hv_isolated}, {"hv_live", s.interlock.hv_live}}},
           {"fault", s.fault ? Json(*s.fault) : Json(nullptr)},
           {"clamp_force_n", s.last_sample ? s.last_sample->clamp_force : 0.0},
           {"last_sample", s.last_sample ? store::sample_to_json(*s.last_sample) : Json(nullptr)}};
    auto lt = last_trial_.find(s.id);
    c["last_trial"] = lt != last_trial_.end() ? lt->second : Json(nullptr);
    out.push_back(c);
  }
  return {200, Json{{"schema_version", campaign::kSchemaVersion}, {"channels", out}}};
}

Service::Response Service::command(int channel, const Json& cmd) {
  if (channel < 0 || channel >= static_cast<int>(stations_.size())) {
    return reject(404, "unknown channel " + std::to_string(channel));
  }
  if (!cmd.is_object()) return reject(400, "command must be a JSON object");
  auto& st = *stations_[static_cast<std::size_t>(channel)];
  const auto action = cmd.value("action", std::string());
  const Json payload = cmd.contains("payload") ? cmd.at("payload") : Json::object();
  const auto ok = [&](Json extra = Json::object()) {
    Json body{{"schema_version", campaign::kSchemaVersion}, {"accepted", true}};
    for (auto& [k, v] : extra.items()) body[k] = v;
    return Response{200, body};
  };

  if (action == "Abort") {
    if (!st.busy() && !st.status().current_trial) return reject(409, "no running trial on channel " + std::to_string(channel));
    st.abort_flag() = true;
    return ok();
  }

  {
    std::lock_guard lock(mu_);
    if (action == "SwitchMode") {
      rig::MeasurementTarget target{};
      try {
        target = rig::parse_measurement_target(payload.value("target", std::string()));
      } catch (const std::exception& e) {
        return reject(400, e.what());
      }
      if (target == rig::MeasurementTarget::Impedance && st.status().interlock.hv_live) {
        st.note_event("interlock-violation", "SwitchMode impedance rejected while HV live");
        return reject(409, "interlock: HV is live on channel " + std::to_string(channel));
      }
    }
    if (campaign_active()) return reject(409, "busy: a campaign owns the channels");
    if (st.busy()) return reject(409, "busy: channel " + std::to_string(channel) + " is running a trial");
  }

  try {
    if (action == "SwitchMode") {
      const auto target = rig::parse_measurement_target(payload.value("target", std::string()));
      const double bias = payload.value("bias_n", 0.6);
      const auto mode = st.call([&](rig::Station& s) {
        s.channel().switch_mode(target, bias);
        return s.channel().mode();
      });
      return ok(Json{{"mode", std::string(rig::to_string(mode))}});
    }
    if (action == "ResetFault") {
      st.call([](rig::Station& s) { s.channel().reset_fault(); });
      return ok(Json{{"mode", "Idle"}});
    }
    if (action == "StartTrial") {
      rig::TrialRequest req;
      req.field = payload.value("field", 40.0);
      req.frequency = payload.value("freq", 1.0);
      req.duty = payload.value("duty", 0.5);
      req.protocol.lifetime.cap = payload.value("cap_s", 10800.0);
      req.protocol.sample_rate_hz = payload.value("sample_rate_hz", 100.0);
      device::DeviceSpec spec = device::DeviceSpec::test_sample(
          {device::parse_filler(payload.value("filler", std::string("CB"))), payload.value("cnt", 2.5)});
      spec.validate();
      req.layer_thickness_um = spec.layer_thickness_um;
      waveform::WaveformSpec::dc_square(req.field, req.frequency, req.protocol.lifetime.cap, req.duty).validate();
      req.protocol.validate();
      if (st.status().mode != rig::ChannelMode::Idle) {
        return reject(409, "channel " + std::to_string(channel) + " must be Idle to start a trial");
      }
      const auto seed = payload.value("seed", static_cast<std::uint64_t>(1));
      std::string device_id;
      {
        std::lock_guard lock(mu_);
        device_id = "manual-" + std::to_string(next_manual_++);
      }
      st.abort_flag() = false;
      st.set_current_trial(device_id);
      st.submit([this, req, spec, seed, device_id](rig::Station& s) {
        s.backend().mount(spec, seed);
        rig::TrialOutcome out;
        try {
          out = s.channel().run_trial(req, &s.abort_flag());
        } catch (const std::exception& e) {
          out.status = rig::TrialStatus::Faulted;
          out.fault_reason = e.what();
        }
        s.backend().unmount();
        s.set_current_trial(std::nullopt);
        Json j = outcome_json(device_id, out);
        broadcaster_.publish(frame("progress", cfg_.accel,
                                   Json{{"kind", "trial-ended"}, {"channel", s.id()}, {"trial", j}}),
                             s.id());
        std::lock_guard lock(mu_);
        last_trial_[s.id()] = j;
      });
      return {202, Json{{"schema_version", campaign::kSchemaVersion}, {"accepted", true}, {"device_id", device_id}}};
    }
  } catch (const InterlockViolation& e) {
    return reject(409, e.what());
  } catch (const rig::RigStateError& e) {
    return reject(409, e.what());
  } catch (const rig::RigFault& e) {
    return reject(409, std::string("fault: ") + e.what());
  } catch (const ValidationError& e) {
    return reject(400, e.what());
  } catch (const RangeError& e) {
    return reject(400, e.what());
  } catch (const Json::exception& e) {
    return reject(400, e.what());
  }
  return reject(400, "unknown action '" + action + "'");
}

Service::Response Service::report(const std::string& run_id) const {
  if (!safe_run_id(run_id)) return reject(404, "unknown run '" + run_id + "'");
  const fs::path dir = cfg_.data_dir / run_id;
  if (!fs::exists(dir / "report.json")) return reject(404, "no report for run '" + run_id + "'");
  try {
    return {200, store::report_to_json(store::load_report(dir))};
  } catch (const StorageError& e) {
    return reject(500, e.what());
  }
}

std::shared_ptr<Broadcaster::Subscriber> Service::open_stream(double rate_hz, std::set<int> channels) {
  auto sub = broadcaster_.subscribe(rate_hz, channels);
  std::lock_guard lock(sub->mu);
  Broadcaster::push(*sub,
                    frame("hello", cfg_.accel, Json{{"stream_id", sub->id}, {"rate_hz", rate_hz}}).dump(),
                    cfg_.max_queued_frames);
  for (const auto& st : stations_) {
    if (!channels.empty() && !channels.count(st->id())) continue;
    const auto s = st->status();
    if (s.mode == rig::ChannelMode::Faulted) {
      Broadcaster::push(*sub,
                        frame("event", cfg_.accel, Json{{"kind", "fault"}, {"detail", s.fault.value_or("faulted")}},
                              st->id())
                            .dump(),
                        cfg_.max_queued_frames);
    }
  }
  return sub;
}

void Service::wait_idle() {
  for (;;) {
    bool idle = true;
    {
      std::lock_guard lock(mu_);
      idle = !campaign_active();
    }
    for (const auto& st : stations_) idle = idle && !st->busy();
    if (idle) return;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

void Service::mount(httplib::Server& server) {
  const auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  const auto parse_body = [](const httplib::Request& req) -> std::optional<Json> {
    try {
      return Json::parse(req.body);
    } catch (const Json::exception&) {
      return std::nullopt;
    }
  };

  server.Post("/campaigns", [=, this](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    reply(res, body ? start_campaign(*body) : reject(400, "body is not JSON"));
  });
  server.Get(R"(/campaigns/([^/]+))", [=, this](const httplib::Request& req, httplib::Response& res) {
    reply(res, campaign_status(req.matches[1]));
  });
  server.Post(R"(/campaigns/([^/]+)/commands)", [=, this](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    reply(res, body ? campaign_command(req.matches[1], *body) : reject(400, "body is not JSON"));
  });
  server.Get("/channels", [=, this](const httplib::Request&, httplib::Response& res) { reply(res, channels()); });
  server.Post(R"(/channels/(\d+)/commands)", [=, this](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    reply(res, body ? command(std::stoi(req.matches[1]), *body) : reject(400, "body is not JSON"));
  });
  server.Get(R"(/runs/([^/]+)/report)", [=, this](const httplib::Request& req, httplib::Response& res) {
    reply(res, report(req.matches[1]));
  });
  server.Post(R"(/streams/(\d+))", [=, this](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    if (!body || !body->is_object()) return reply(res, reject(400, "body is not a JSON object"));
    try {
      std::optional<double> rate;
      std::optional<std::set<int>> chans;
      if (body->contains("rate_hz")) rate = body->at("rate_hz").get<double>();
      if (body->contains("channels")) chans = body->at("channels").get<std::set<int>>();
      if (!broadcaster_.configure(std::stoull(req.matches[1]), rate, chans)) {
        return reply(res, reject(404, "unknown stream"));
      }
      reply(res, Response{200, Json{{"schema_version", campaign::kSchemaVersion}, {"accepted", true}}});
    } catch (const std::exception& e) {
      reply(res, reject(400, e.what()));
    }
  });
  server.Get("/stream", [this](const httplib::Request& req, httplib::Response& res) {
    double rate = cfg_.default_stream_hz;
    std::set<int> chans;
    try {
      if (req.has_param("rate_hz")) rate = std::stod(req.get_param_value("rate_hz"));
      if (req.has_param("channels")) chans = parse_channel_list(req.get_param_value("channels"));
      auto sub = open_stream(rate, chans);
      res.set_chunked_content_provider(
          "application/x-ndjson",
          [sub](std::size_t, httplib::DataSink& sink) {
            for (;;) {
              if (!sink.is_writable()) return false;
              auto f = Broadcaster::next(*sub, 200);
              if (f) {
                *f += '\n';
                return sink.write(f->data(), f->size());
              }
              std::lock_guard lock(sub->mu);
              if (sub->closed) {
                sink.done();
                return true;
              }
            }
          },
          [this, sub](bool) { broadcaster_.unsubscribe(sub->id); });
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(Json{{"accepted", false}, {"reason", e.what()}}.dump(), "application/json");
    }
  });
}

}  // namespace dealab::service
