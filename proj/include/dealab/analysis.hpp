#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace dealab::analysis {

struct TraceSample {
  double t;             // s
  double displacement;  // mm
};

struct DisplacementTrace {
  std::vector<TraceSample> samples;
  double drive_freq = 1.0;   // Hz
  double drive_start = 0.0;  // s, period boundaries are drive_start + k / drive_freq
};

struct CycleAmplitude {
  double t;          // centre of the drive period
  double amplitude;  // max - min within the period, mm

  friend bool operator==(const CycleAmplitude&, const CycleAmplitude&) = default;
};

/// Streaming peak-to-peak per drive period. A period is emitted once a sample
/// from a later period arrives, so the trailing partial period never is.
class CycleAmplitudeReducer {
 public:
  explicit CycleAmplitudeReducer(double drive_freq, double drive_start = 0.0);

  std::optional<CycleAmplitude> push(double t, double displacement);

 private:
  double freq_;
  double start_;
  long long period_ = -1;
  double lo_ = 0.0;
  double hi_ = 0.0;
};

/// Throws SamplingError when the trace is shorter than two periods, sampled
/// below 4x the drive frequency, or not strictly increasing in time.
[[nodiscard]] std::vector<CycleAmplitude> cycle_amplitudes(const DisplacementTrace& trace);

enum class TerminalCause { ThresholdCrossed, HardFailure, Cap, Aborted };
[[nodiscard]] std::string_view to_string(TerminalCause c);
[[nodiscard]] TerminalCause parse_terminal_cause(std::string_view s);

enum class InitialEstimator { TheilSen, Median };

struct LifetimeParams {
  double threshold = 0.8;
  double cap = 10800.0;
  int init_window = 10;
  int median_window = 5;
  int persistence = 5;
  InitialEstimator estimator = InitialEstimator::TheilSen;

  void validate() const;
};

struct LifetimeResult {
  double lifetime = 0.0;
  bool censored = false;
  double initial_amplitude = 0.0;
  TerminalCause cause = TerminalCause::Cap;

  friend bool operator==(const LifetimeResult&, const LifetimeResult&) = default;
};

/// Incremental lifetime evaluation; feeding amplitudes one at a time or all at
/// once gives identical results.
class LifetimeTracker {
 public:
  explicit LifetimeTracker(LifetimeParams params = {});

  void push(const CycleAmplitude& c);
  void push(std::span<const CycleAmplitude> cs);

  /// Threshold crossing confirmed by the persistence rule, if any yet.
  [[nodiscard]] std::optional<double> confirmed_crossing() const { return crossing_; }
  [[nodiscard]] std::optional<double> initial_amplitude() const { return initial_; }
  [[nodiscard]] std::size_t cycles() const { return amps_.size(); }

  /// Closes the series. Evaluates the tail with truncated median windows.
  [[nodiscard]] LifetimeResult finish(std::optional<double> hard_failure_t = std::nullopt,
                                      std::optional<double> abort_t = std::nullopt) const;

 private:
  void evaluate(std::size_t i);
  [[nodiscard]] double smoothed(std::size_t i) const;

  LifetimeParams params_;
  std::vector<CycleAmplitude> amps_;
  std::optional<double> initial_;
  std::size_t next_eval_ = 0;
  std::size_t run_start_ = 0;
  std::size_t run_length_ = 0;
  double prev_smoothed_ = 0.0;
  std::optional<double> crossing_;
};

/// Lifetime from cycle amplitudes. Events preempt each other by time: the
/// confirmed crossing, a hard failure, an operator abort, and the cap.
/// Throws InsufficientDataError with fewer than init_window cycles unless a
/// hard failure or abort explains the short series.
[[nodiscard]] LifetimeResult lifetime(std::span<const CycleAmplitude> amplitudes, const LifetimeParams& params = {},
                                      std::optional<double> hard_failure_t = std::nullopt,
                                      std::optional<double> abort_t = std::nullopt);

/// Mean amplitude over cycles with t <= until. Throws InsufficientDataError when empty.
[[nodiscard]] double average_displacement(std::span<const CycleAmplitude> amplitudes, double until);

struct SweepPoint {
  double freq;            // Hz
  double capacitance_nf;  // nF

  friend bool operator==(const SweepPoint&, const SweepPoint&) = default;
};

inline constexpr double kCapacitanceReferenceHz = 10e3;

/// 1 - post/pre at the 10 kHz reference, log-frequency interpolation between sweep points.
[[nodiscard]] double capacitance_degradation(std::span<const SweepPoint> pre, std::span<const SweepPoint> post);

}  // namespace dealab::analysis
