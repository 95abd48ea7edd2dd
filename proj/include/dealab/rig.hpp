#pragma once

#include <atomic>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dealab/analysis.hpp"
#include "dealab/hardware.hpp"
#include "dealab/waveform.hpp"

namespace dealab::rig {

enum class ChannelMode {
  Idle,
  ActuatingDisplacement,
  SwitchingStage,
  ClampingForce,
  MeasuringForce,
  ImpedanceSweep,
  Faulted,
};
[[nodiscard]] std::string_view to_string(ChannelMode m);
[[nodiscard]] ChannelMode parse_channel_mode(std::string_view s);

enum class MeasurementTarget { Displacement, Force, Impedance };
[[nodiscard]] std::string_view to_string(MeasurementTarget t);
[[nodiscard]] MeasurementTarget parse_measurement_target(std::string_view s);

struct MotionStage {
  RotaryPosition rotary = RotaryPosition::UnderLDS;
  double linear_pos = 0.0;   // mm
  double clamp_force = 0.0;  // N
};

struct Interlock {
  bool hv_isolated = false;
  bool hv_live = false;
};

/// One acquisition record. Exactly one of displacement/force is present
/// while actuating or measuring force; both are absent otherwise.
struct TelemetrySample {
  double t = 0.0;  // s from trial start
  int channel = 0;
  ChannelMode mode = ChannelMode::Idle;
  double voltage = 0.0;  // V
  double current = 0.0;  // uA
  std::optional<double> displacement;  // mm
  std::optional<double> force;         // N
  double clamp_force = 0.0;            // N
  bool hv_isolated = false;

  friend bool operator==(const TelemetrySample&, const TelemetrySample&) = default;
};

struct RigEvent {
  double t = 0.0;  // adapter time
  std::string kind;
  std::string detail;

  friend bool operator==(const RigEvent&, const RigEvent&) = default;
};

/// Operation refused because of the channel's current state; nothing changed.
class RigStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The channel entered Faulted. Requires reset_fault().
class RigFault : public std::runtime_error {
 public:
  RigFault(AdapterFault kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] AdapterFault kind() const noexcept { return kind_; }

 private:
  AdapterFault kind_;
};

struct RigConfig {
  double clamp_step_mm = 0.05;
  double clamp_tolerance_n = 0.05;
  double travel_max_mm = 20.0;
  int impedance_points = 50;
  double current_trip_ua = 1000.0;
};

struct ClampResult {
  double clamp_force = 0.0;  // N, measured at convergence
  double linear_pos = 0.0;   // mm
  int steps = 0;
};

enum class AverageWindow { Lifetime, WholeTrial };

struct TrialProtocol {
  analysis::LifetimeParams lifetime{};
  double sample_rate_hz = 100.0;
  bool pre_sweep = true;
  bool post_sweep = true;
  double force_check_interval_s = 0.0;  // 0 disables periodic blocked-force checks
  double force_check_duration_s = 2.0;
  double bias_force_n = 0.6;
  bool stop_on_threshold = true;
  AverageWindow average_window = AverageWindow::Lifetime;

  void validate() const;
  /// Displacement acquisition rate: the configured rate, raised to 4x the drive frequency if needed.
  [[nodiscard]] double acquisition_rate(double drive_freq) const;
};

struct TrialRequest {
  double field = 40.0;      // V/um
  double frequency = 1.0;   // Hz
  double duty = 0.5;
  double layer_thickness_um = 30.0;
  TrialProtocol protocol{};
};

enum class TrialStatus { Complete, Aborted, Faulted };
[[nodiscard]] std::string_view to_string(TrialStatus s);
[[nodiscard]] TrialStatus parse_trial_status(std::string_view s);

struct TrialOutcome {
  TrialStatus status = TrialStatus::Complete;
  analysis::LifetimeResult lifetime{};
  double avg_displacement = 0.0;  // mm
  std::vector<analysis::CycleAmplitude> amplitudes;
  std::vector<analysis::SweepPoint> pre_sweep;
  std::vector<analysis::SweepPoint> post_sweep;
  std::optional<double> capacitance_degradation;
  std::optional<double> hard_failure_t;  // actuation time of detected breakdown
  double actuation_time = 0.0;           // s with HV applied
  double duration = 0.0;                 // s from trial start to end
  std::size_t samples = 0;
  std::vector<double> force_peaks;       // N, one per force check
  std::string fault_reason;
  bool partial = false;
};

using TelemetrySink = std::function<void(const TelemetrySample&)>;
using EventSink = std::function<void(int channel, const RigEvent&)>;

/// One measurement channel: motion stage, HV path with isolation relays, and
/// the mode state machine. Owned by a single executor; not thread-safe except
/// for the atomics exposed for monitoring.
class Channel {
 public:
  Channel(int id, HardwareAdapter& adapter, RigConfig cfg = {});

  [[nodiscard]] int id() const { return id_; }
  [[nodiscard]] ChannelMode mode() const { return mode_.load(); }
  [[nodiscard]] MotionStage stage() const { return stage_; }
  [[nodiscard]] Interlock interlock() const { return {isolated_.load(), hv_live_.load()}; }
  [[nodiscard]] const std::vector<RigEvent>& events() const { return events_; }
  [[nodiscard]] const RigConfig& config() const { return cfg_; }
  [[nodiscard]] std::optional<AdapterFault> fault() const { return fault_; }

  /// Receives every acquisition sample (trials, sweeps, manual drive).
  void set_telemetry_sink(TelemetrySink sink) { sink_ = std::move(sink); }
  /// Receives every logged event as it happens.
  void set_event_sink(EventSink sink) { event_sink_ = std::move(sink); }

  /// Ordered sequence: HV to 0 V, release clamp, isolate (impedance) or
  /// reconnect, rotate, clamp (force), enter target mode.
  /// Throws InterlockViolation for impedance while HV is live, RigStateError
  /// when Faulted, RigFault when an instrument fails on the way.
  void switch_mode(MeasurementTarget target, double bias_n = 0.6);

  /// Lowers the force sensor in fixed steps until it reads >= bias.
  ClampResult clamp_with_feedback(double bias_n);

  /// Log-spaced probe sweep 1 kHz..1 MHz. Throws InterlockViolation unless isolated.
  std::vector<analysis::SweepPoint> impedance_sweep();

  /// Manual drive in the current actuation/force mode.
  void start_drive(const waveform::WaveformSpec& spec, double layer_thickness_um);
  void stop_drive();
  /// Acquire for `seconds` at `rate_hz` under whatever is currently applied.
  void acquire(double seconds, double rate_hz);

  /// Full electromechanical trial on the mounted device. Faults end the trial
  /// with status Faulted and partial data instead of throwing.
  TrialOutcome run_trial(const TrialRequest& request, const std::atomic<bool>* abort = nullptr);

  /// Returns to Idle: HV off, clamp released, isolation relays closed.
  void park();
  void reset_fault();

 private:
  void log(std::string kind, std::string detail = {});
  void transition(ChannelMode to);
  void zero_hv();
  void release_clamp();
  [[noreturn]] void enter_fault(const AdapterError& e);
  TelemetrySample sample(double trial_t);
  void emit(const TelemetrySample& s);

  int id_;
  HardwareAdapter& hw_;
  RigConfig cfg_;
  std::atomic<ChannelMode> mode_{ChannelMode::Idle};
  std::atomic<bool> isolated_{false};
  std::atomic<bool> hv_live_{false};
  MotionStage stage_{};
  std::vector<RigEvent> events_;
  std::optional<AdapterFault> fault_;
  TelemetrySink sink_;
  EventSink event_sink_;
  double trial_start_ = 0.0;
};

}  // namespace dealab::rig
