#include "dealab/station.hpp"

#include <chrono>

namespace dealab::rig {

namespace {

double wall_seconds() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

Station::Station(int id, device::Calibration cal, SimulatorConfig sim, RigConfig rig)
    : id_(id), backend_(std::move(cal), sim), channel_(id, backend_, rig) {
  channel_.set_telemetry_sink([this](const TelemetrySample& s) { on_sample(s); });
  channel_.set_event_sink([this](int, const RigEvent& e) { on_event(e); });
  backend_.pacer = [this](double now) { pace(now); };
  worker_ = std::thread([this] { loop(); });
}

Station::~Station() {
  abort_ = true;
  {
    std::lock_guard lock(queue_mu_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

std::future<void> Station::submit(std::function<void(Station&)> job) {
  // Bookkeeping runs before the future is satisfied, so a caller woken by it
  // never sees its own job as still pending.
  auto task = std::make_shared<std::packaged_task<void()>>([this, job = std::move(job)] {
    struct Done {
      Station* st;
      ~Done() {
        {
          std::lock_guard lock(st->status_mu_);
          const auto f = st->channel_.fault();
          st->fault_ = f ? std::optional<std::string>(std::string(to_string(*f))) : std::nullopt;
        }
        --st->pending_;
      }
    } done{this};
    job(*this);
  });
  auto fut = task->get_future();
  ++pending_;
  {
    std::lock_guard lock(queue_mu_);
    queue_.push_back([task] { (*task)(); });
  }
  queue_cv_.notify_one();
  return fut;
}

void Station::loop() {
  for (;;) {
    std::function<void()> job;
    {
      std::unique_lock lock(queue_mu_);
      queue_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      job = std::move(queue_.front());
      queue_.pop_front();
    }
    pace_wall0_ = wall_seconds();
    pace_sim0_ = backend_.now();
    job();
  }
}

void Station::pace(double sim_now) {
  const double accel = accel_.load(std::memory_order_relaxed);
  if (accel <= 0.0) return;
  const double target = pace_wall0_ + (sim_now - pace_sim0_) / accel;
  const double ahead = target - wall_seconds();
  if (ahead > 1e-3) std::this_thread::sleep_for(std::chrono::duration<double>(ahead));
}

void Station::set_current_trial(std::optional<std::string> device_id) {
  std::lock_guard lock(status_mu_);
  current_trial_ = std::move(device_id);
}

Station::Status Station::status() const {
  Status s;
  s.id = id_;
  s.mode = channel_.mode();
  s.interlock = channel_.interlock();
  s.busy = busy();
  std::lock_guard lock(status_mu_);
  s.current_trial = current_trial_;
  s.fault = fault_;
  s.last_sample = last_sample_;
  return s;
}

std::vector<RigEvent> Station::events() const {
  std::lock_guard lock(status_mu_);
  return events_;
}

void Station::note_event(const std::string& kind, const std::string& detail) {
  on_event(RigEvent{backend_.now(), kind, detail});
}

Station::ListenerId Station::add_telemetry_listener(TelemetryListener l) {
  std::lock_guard lock(listeners_mu_);
  const auto id = next_listener_++;
  telemetry_listeners_.emplace_back(id, std::move(l));
  has_telemetry_listeners_ = true;
  return id;
}

Station::ListenerId Station::add_event_listener(EventListener l) {
  std::lock_guard lock(listeners_mu_);
  const auto id = next_listener_++;
  event_listeners_.emplace_back(id, std::move(l));
  return id;
}

void Station::remove_listener(ListenerId id) {
  std::lock_guard lock(listeners_mu_);
  telemetry_listeners_.remove_if([id](const auto& p) { return p.first == id; });
  event_listeners_.remove_if([id](const auto& p) { return p.first == id; });
  has_telemetry_listeners_ = !telemetry_listeners_.empty();
}

void Station::on_sample(const TelemetrySample& s) {
  {
    std::lock_guard lock(status_mu_);
    last_sample_ = s;
  }
  if (!has_telemetry_listeners_.load(std::memory_order_relaxed)) return;
  std::lock_guard lock(listeners_mu_);
  for (auto& [id, l] : telemetry_listeners_) l(s);
}

void Station::on_event(const RigEvent& e) {
  {
    std::lock_guard lock(status_mu_);
    events_.push_back(e);
    if (e.kind == "fault") fault_ = e.detail;
    if (e.kind == "fault-reset") fault_.reset();
  }
  std::lock_guard lock(listeners_mu_);
  for (auto& [id, l] : event_listeners_) l(id_, e);
}

}  // namespace dealab::rig
