#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "dealab/runner.hpp"
#include "dealab/station.hpp"
#include "dealab/store.hpp"

namespace httplib {
class Server;
}

namespace dealab::service {

using Json = store::Json;

struct ServiceConfig {
  std::filesystem::path data_dir = "runs";
  int channels = 2;
  double accel = 1000.0;  // simulated seconds per wall second; 0 = unpaced
  double default_stream_hz = 10.0;
  std::size_t max_queued_frames = 4096;  // per subscriber; oldest dropped beyond this
  device::Calibration calibration = device::Calibration::defaults();
};

/// Fan-out of stream frames to subscribers, with per-subscriber telemetry
/// decimation on simulated time.
class Broadcaster {
 public:
  struct Subscriber {
    std::uint64_t id = 0;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::string> frames;
    double rate_hz = 10.0;
    std::set<int> channels;  // empty: all
    std::map<int, double> next_t;
    std::map<int, double> last_t;
    std::size_t dropped = 0;
    bool closed = false;
  };

  explicit Broadcaster(std::size_t max_queue = 4096) : max_queue_(max_queue) {}

  std::shared_ptr<Subscriber> subscribe(double rate_hz, std::set<int> channels = {});
  void unsubscribe(std::uint64_t id);
  /// Changes rate/channel filter of a live subscription. False if unknown.
  bool configure(std::uint64_t id, std::optional<double> rate_hz, std::optional<std::set<int>> channels);
  void close_all();

  void publish_sample(const rig::TelemetrySample& s, double accel);
  void publish(const Json& frame, std::optional<int> channel = std::nullopt);
  /// Queue a frame to one subscriber only.
  static void push(Subscriber& sub, std::string frame, std::size_t max_queue);

  /// Blocks up to `timeout_ms` for the next frame; nullopt on timeout or close.
  static std::optional<std::string> next(Subscriber& sub, int timeout_ms);

  [[nodiscard]] std::size_t subscribers() const;

 private:
  std::size_t max_queue_;
  mutable std::mutex mu_;
  std::atomic<std::size_t> count_{0};
  std::uint64_t next_id_ = 1;
  std::map<std::uint64_t, std::shared_ptr<Subscriber>> subs_;
};

[[nodiscard]] Json frame(const std::string& type, double accel, Json data, std::optional<int> channel = std::nullopt);

/// Control surface over the stations. Methods are transport independent; the
/// HTTP routes in mount() only translate requests and responses.
class Service {
 public:
  struct Response {
    int status = 200;
    Json body;
  };

  explicit Service(ServiceConfig cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  Response start_campaign(const Json& manifest);
  Response campaign_status(const std::string& id) const;
  Response campaign_command(const std::string& id, const Json& cmd);
  Response channels() const;
  Response command(int channel, const Json& cmd);
  Response report(const std::string& run_id) const;

  Broadcaster& broadcaster() { return broadcaster_; }
  /// Subscribes and queues the greeting plus any standing fault notices.
  std::shared_ptr<Broadcaster::Subscriber> open_stream(double rate_hz, std::set<int> channels);

  /// Waits until no campaign or manual trial is running.
  void wait_idle();

  void mount(httplib::Server& server);
  [[nodiscard]] const ServiceConfig& config() const { return cfg_; }

 private:
  struct CampaignSlot {
    std::string id;
    std::unique_ptr<campaign::CampaignRunner> runner;
    std::atomic<bool> cancel{false};
    std::thread thread;
    std::atomic<bool> done{false};
  };

  Response reject(int status, const std::string& reason) const;
  [[nodiscard]] bool campaign_active() const;

  ServiceConfig cfg_;
  Broadcaster broadcaster_;
  std::vector<std::unique_ptr<rig::Station>> stations_;
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<CampaignSlot>> campaigns_;
  std::map<int, Json> last_trial_;
  int next_campaign_ = 1;
  int next_manual_ = 1;
};

}  // namespace dealab::service
