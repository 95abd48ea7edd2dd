#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <list>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "dealab/rig.hpp"
#include "dealab/sim_backend.hpp"

namespace dealab::rig {

/// One simulated channel with its own executor thread. Jobs run one at a time
/// in submission order, so commands on a channel never interleave.
class Station {
 public:
  Station(int id, device::Calibration cal = device::Calibration::defaults(), SimulatorConfig sim = {},
          RigConfig rig = {});
  ~Station();
  Station(const Station&) = delete;
  Station& operator=(const Station&) = delete;

  [[nodiscard]] int id() const { return id_; }

  // Only touch these from inside a job.
  [[nodiscard]] Channel& channel() { return channel_; }
  [[nodiscard]] SimulatedBackend& backend() { return backend_; }

  std::future<void> submit(std::function<void(Station&)> job);

  /// Runs `f` on the executor and waits for its result; exceptions propagate.
  template <class F>
  auto call(F f) -> std::invoke_result_t<F, Station&> {
    using R = std::invoke_result_t<F, Station&>;
    if constexpr (std::is_void_v<R>) {
      submit([&f](Station& s) { f(s); }).get();
    } else {
      std::optional<R> out;
      submit([&f, &out](Station& s) { out.emplace(f(s)); }).get();
      return std::move(*out);
    }
  }

  /// Simulated seconds per wall second; 0 runs unpaced.
  void set_pacing(double accel) { accel_ = accel; }
  [[nodiscard]] double pacing() const { return accel_.load(); }

  [[nodiscard]] std::atomic<bool>& abort_flag() { return abort_; }
  [[nodiscard]] bool busy() const { return pending_.load() > 0; }

  void set_current_trial(std::optional<std::string> device_id);

  struct Status {
    int id = 0;
    ChannelMode mode = ChannelMode::Idle;
    Interlock interlock{};
    bool busy = false;
    std::optional<std::string> current_trial;
    std::optional<std::string> fault;
    std::optional<TelemetrySample> last_sample;
  };
  [[nodiscard]] Status status() const;
  [[nodiscard]] std::vector<RigEvent> events() const;
  /// Records an event that happened outside the channel (e.g. a rejected command).
  void note_event(const std::string& kind, const std::string& detail);

  using TelemetryListener = std::function<void(const TelemetrySample&)>;
  using EventListener = std::function<void(int channel, const RigEvent&)>;
  using ListenerId = std::size_t;
  ListenerId add_telemetry_listener(TelemetryListener l);
  ListenerId add_event_listener(EventListener l);
  void remove_listener(ListenerId id);

 private:
  void loop();
  void on_sample(const TelemetrySample& s);
  void on_event(const RigEvent& e);
  void pace(double sim_now);

  int id_;
  SimulatedBackend backend_;
  Channel channel_;

  std::atomic<double> accel_{0.0};
  std::atomic<bool> abort_{false};
  std::atomic<int> pending_{0};
  double pace_wall0_ = 0.0;
  double pace_sim0_ = 0.0;

  mutable std::mutex status_mu_;
  std::optional<std::string> current_trial_;
  std::optional<TelemetrySample> last_sample_;
  std::vector<RigEvent> events_;
  std::optional<std::string> fault_;

  std::mutex listeners_mu_;
  ListenerId next_listener_ = 1;
  std::list<std::pair<ListenerId, TelemetryListener>> telemetry_listeners_;
  std::list<std::pair<ListenerId, EventListener>> event_listeners_;
  std::atomic<bool> has_telemetry_listeners_{false};

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<std::function<void()>> queue_;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace dealab::rig
