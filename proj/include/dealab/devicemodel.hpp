#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "dealab/config.hpp"

// Synthetic multilayer linear DEA: quasi-static electromechanical response,
// frequency response of the electrode path, and seeded wear-out/breakdown.

namespace dealab::device {

enum class Filler { LM, CB, CG };

[[nodiscard]] std::string_view to_string(Filler f);
[[nodiscard]] Filler parse_filler(std::string_view s);

/// CNT ink per filtration area, FA = 50.24 cm^2.
inline constexpr double kFiltrationAreaCm2 = 50.24;

struct MaterialConfig {
  Filler filler = Filler::CB;
  double cnt_conc = 2.5;  // mL/FA

  void validate() const;
  friend bool operator==(const MaterialConfig&, const MaterialConfig&) = default;
  friend auto operator<=>(const MaterialConfig&, const MaterialConfig&) = default;
};

[[nodiscard]] std::string to_string(const MaterialConfig& m);

struct DeviceSpec {
  int active_layers = 10;
  double layer_thickness_um = 30.0;
  double active_length_mm = 10.0;
  double electrode_width_mm = 40.0;
  bool reinforced = false;
  double mass_g = 1.0;
  MaterialConfig material{};

  void validate() const;

  /// 10-layer, 1 cm testing sample.
  static DeviceSpec test_sample(MaterialConfig material = {});
  /// 20-layer reinforced actuator used on the walking robot (28 g per 12 actuators).
  static DeviceSpec scaled();
};

struct DeviceState {
  double age_s = 0.0;
  double wear = 0.0;          // consumed characteristic life, sum of dt / eta
  double amplitude_factor = 1.0;
  double capacitance_factor = 1.0;
  bool failed = false;
  double failed_at_s = -1.0;  // age at breakdown, interpolated inside the failing step
  std::uint64_t seed = 0;
  double failure_wear = 1.0;  // seeded Weibull quantile; breakdown when wear reaches it

  friend bool operator==(const DeviceState&, const DeviceState&) = default;
};

struct Drive {
  double field = 0.0;      // V/um
  double frequency = 1.0;  // Hz

  void validate() const;
};

/// Every tunable of the model. defaults() mirrors config/calibration.conf.
struct Calibration {
  int version = 1;

  // strain s(E) = strain_gain * E^2 * (1 + tanh((E - saturation_field) / saturation_width))
  double strain_gain = 8.033609077027346e-05;
  double saturation_field = 50.0;
  double saturation_width = 20.0;

  // blocked force, N per layer with the same field law
  double force_gain = 2.9640670157115478e-05;
  double reinforcement_force_factor = 2.0;
  double rated_field = 42.0;

  // static (quasi-DC) material gains on strain and force
  double filler_gain_lm = 0.93;
  double filler_gain_cb = 1.00;
  double filler_gain_cg = 1.03;
  double cnt_gain_peak = 2.5;
  double cnt_gain_width = 2.0;

  // electrode-path RC roll-off: tau = rc_tau_s * filler_rc * (rc_cnt_ref / cnt)^rc_cnt_exponent
  double rc_tau_s = 1.9098593171027439e-3;
  double filler_rc_lm = 0.80;
  double filler_rc_cb = 1.00;
  double filler_rc_cg = 1.15;
  double rc_cnt_ref = 2.5;
  double rc_cnt_exponent = 2.0;

  // Weibull wear-out: eta = eta_ref * (E/ref_field)^-field_exponent * (f/ref_frequency)^frequency_exponent * material
  double eta_ref_s = 6000.0;
  double ref_field = 40.0;
  double ref_frequency = 1.0;
  double field_exponent = 13.0;
  double frequency_exponent = 0.15494177890295352;
  double weibull_shape = 6.0;

  // material life modifiers, geometric interpolation in log f between the anchors
  double anchor_low_hz = 1.0;
  double anchor_high_hz = 50.0;
  double life_lm_low = 0.85;
  double life_lm_high = 0.33389261744966444;
  double life_cg_low = 1.22;
  double life_cg_high = 1.60;
  // CNT: Lorentzian in concentration normalised to 1 at the baseline concentration
  double cnt_life_peak_low = 2.7;
  double cnt_life_width_low = 1.3560235986147144;
  double cnt_life_peak_high = 2.9;
  double cnt_life_width_high = 0.8101914936669334;
  double baseline_cnt = 2.5;

  double amplitude_loss_at_unit_wear = 0.05;  // A = (1 - loss)^(wear^2)
  double capacitance_loss_rate = 0.1;         // per unit wear at ref_field, scales with (E/ref_field)^2

  // capacitance
  double relative_permittivity = 2.8;
  double capacitance_rolloff_per_decade = 0.0167;

  // electrical leakage seen by the current monitor
  double leakage_resistance_gohm = 50.0;

  static Calibration defaults() { return Calibration{}; }
  static Calibration from_config(const KeyValueConfig& cfg);
  [[nodiscard]] KeyValueConfig to_config() const;
};

[[nodiscard]] double strain(const Calibration& cal, double field);
[[nodiscard]] double static_material_gain(const Calibration& cal, const MaterialConfig& m);
[[nodiscard]] double response_gain(const Calibration& cal, const MaterialConfig& m, double frequency);

/// Quasi-static stroke in mm. Zero for a failed device.
[[nodiscard]] double displacement(const Calibration& cal, const DeviceSpec& spec, const DeviceState& state,
                                  double field);
[[nodiscard]] double blocked_force(const Calibration& cal, const DeviceSpec& spec, const DeviceState& state,
                                   double field);

[[nodiscard]] double material_life_factor(const Calibration& cal, const MaterialConfig& m, double frequency);
/// Weibull scale (s) under a constant drive; +inf at zero field.
[[nodiscard]] double characteristic_life(const Calibration& cal, const MaterialConfig& m, const Drive& drive);

/// `seed` keys the device's own noise streams; the breakdown quantile is drawn
/// from `failure_seed` (defaults to `seed`) so campaigns can share quantiles
/// across cells.
[[nodiscard]] DeviceState fresh_state(const Calibration& cal, std::uint64_t seed,
                                      std::optional<std::uint64_t> failure_seed = std::nullopt);

/// Advances the device by dt seconds under `drive`. Deterministic in (state, drive, dt).
[[nodiscard]] DeviceState step_degradation(const Calibration& cal, const DeviceSpec& spec, const DeviceState& state,
                                           const Drive& drive, double dt);

/// Same update with the characteristic life already evaluated for `drive`.
[[nodiscard]] DeviceState step_with_life(const Calibration& cal, const DeviceState& state, double field,
                                         double characteristic_life_s, double dt);

inline constexpr double kProbeMinHz = 1e3;
inline constexpr double kProbeMaxHz = 1e6;

[[nodiscard]] double baseline_capacitance_nf(const Calibration& cal, const DeviceSpec& spec);
/// Throws RangeError outside [1 kHz, 1 MHz].
[[nodiscard]] double capacitance(const Calibration& cal, const DeviceSpec& spec, const DeviceState& state,
                                 double probe_freq);

}  // namespace dealab::device
