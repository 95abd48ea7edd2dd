#pragma once

namespace dealab::waveform {

enum class Kind { DCSquare, FrequencySweep };
enum class SweepLaw { Linear, Logarithmic };

/// Unipolar square drive. A sweep keeps the square shape while its frequency
/// moves from freq_start to freq_end across the duration.
struct WaveformSpec {
  Kind kind = Kind::DCSquare;
  double field = 0.0;       // V/um during the high segment
  double freq_start = 1.0;  // Hz
  double freq_end = 1.0;    // Hz, equals freq_start for DCSquare
  double duty = 0.5;
  double duration = 1.0;    // s
  SweepLaw law = SweepLaw::Linear;
  double dead_time = 100e-6;  // s, both switches open around every edge

  void validate() const;

  static WaveformSpec dc_square(double field, double frequency, double duration, double duty = 0.5);
  static WaveformSpec sweep(double field, double f_start, double f_end, double duration,
                            SweepLaw law = SweepLaw::Linear);
};

struct SwitchState {
  bool charge_closed = false;
  bool discharge_closed = false;

  friend bool operator==(const SwitchState&, const SwitchState&) = default;
};

[[nodiscard]] double instantaneous_frequency(const WaveformSpec& spec, double t);
/// Accumulated phase in cycles, the integral of the instantaneous frequency.
[[nodiscard]] double phase(const WaveformSpec& spec, double t);
[[nodiscard]] bool is_high(const WaveformSpec& spec, double t);

/// Output voltage; throws RangeError for t outside [0, duration].
[[nodiscard]] double voltage_at(const WaveformSpec& spec, double t, double layer_thickness_um);

/// Charge/discharge opto-coupler states for the flip-flop stage.
[[nodiscard]] SwitchState switch_schedule(const WaveformSpec& spec, double t);

}  // namespace dealab::waveform
