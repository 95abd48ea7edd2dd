#include "dealab/devicemodel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

#include "dealab/errors.hpp"
#include "dealab/rng.hpp"

namespace dealab::device {

namespace {

constexpr double kVacuumPermittivity = 8.8541878128e-12;  // F/m
constexpr double kTwoPi = 6.283185307179586;

using Member = double Calibration::*;

constexpr std::array<std::pair<const char*, Member>, 38> kCalibrationKeys{{
    {"strain_gain", &Calibration::strain_gain},
    {"saturation_field", &Calibration::saturation_field},
    {"saturation_width", &Calibration::saturation_width},
    {"force_gain", &Calibration::force_gain},
    {"reinforcement_force_factor", &Calibration::reinforcement_force_factor},
    {"rated_field", &Calibration::rated_field},
    {"filler_gain_lm", &Calibration::filler_gain_lm},
    {"filler_gain_cb", &Calibration::filler_gain_cb},
    {"filler_gain_cg", &Calibration::filler_gain_cg},
    {"cnt_gain_peak", &Calibration::cnt_gain_peak},
    {"cnt_gain_width", &Calibration::cnt_gain_width},
    {"rc_tau_s", &Calibration::rc_tau_s},
    {"filler_rc_lm", &Calibration::filler_rc_lm},
    {"filler_rc_cb", &Calibration::filler_rc_cb},
    {"filler_rc_cg", &Calibration::filler_rc_cg},
    {"rc_cnt_ref", &Calibration::rc_cnt_ref},
    {"rc_cnt_exponent", &Calibration::rc_cnt_exponent},
    {"eta_ref_s", &Calibration::eta_ref_s},
    {"ref_field", &Calibration::ref_field},
    {"ref_frequency", &Calibration::ref_frequency},
    {"field_exponent", &Calibration::field_exponent},
    {"frequency_exponent", &Calibration::frequency_exponent},
    {"weibull_shape", &Calibration::weibull_shape},
    {"anchor_low_hz", &Calibration::anchor_low_hz},
    {"anchor_high_hz", &Calibration::anchor_high_hz},
    {"life_lm_low", &Calibration::life_lm_low},
    {"life_lm_high", &Calibration::life_lm_high},
    {"life_cg_low", &Calibration::life_cg_low},
    {"life_cg_high", &Calibration::life_cg_high},
    {"cnt_life_peak_low", &Calibration::cnt_life_peak_low},
    {"cnt_life_width_low", &Calibration::cnt_life_width_low},
    {"cnt_life_peak_high", &Calibration::cnt_life_peak_high},
    {"cnt_life_width_high", &Calibration::cnt_life_width_high},
    {"baseline_cnt", &Calibration::baseline_cnt},
    {"amplitude_loss_at_unit_wear", &Calibration::amplitude_loss_at_unit_wear},
    {"capacitance_loss_rate", &Calibration::capacitance_loss_rate},
    {"relative_permittivity", &Calibration::relative_permittivity},
    {"capacitance_rolloff_per_decade", &Calibration::capacitance_rolloff_per_decade},
}};

double filler_gain(const Calibration& cal, Filler f) {
  switch (f) {
    case Filler::LM: return cal.filler_gain_lm;
    case Filler::CB: return cal.filler_gain_cb;
    case Filler::CG: return cal.filler_gain_cg;
  }
  return 1.0;
}

double filler_rc(const Calibration& cal, Filler f) {
  switch (f) {
    case Filler::LM: return cal.filler_rc_lm;
    case Filler::CB: return cal.filler_rc_cb;
    case Filler::CG: return cal.filler_rc_cg;
  }
  return 1.0;
}

/// 0 at the low anchor, 1 at the high anchor, linear in log f, clamped.
double anchor_weight(const Calibration& cal, double frequency) {
  const double w = std::log(frequency / cal.anchor_low_hz) / std::log(cal.anchor_high_hz / cal.anchor_low_hz);
  return std::clamp(w, 0.0, 1.0);
}

double geometric_blend(double low, double high, double w) {
  return std::exp((1.0 - w) * std::log(low) + w * std::log(high));
}

double field_law(const Calibration& cal, double field) {
  if (field <= 0.0) return 0.0;
  return field * field * (1.0 + std::tanh((field - cal.saturation_field) / cal.saturation_width));
}

}  // namespace

std::string_view to_string(Filler f) {
  switch (f) {
    case Filler::LM: return "LM";
    case Filler::CB: return "CB";
    case Filler::CG: return "CG";
  }
  return "?";
}

Filler parse_filler(std::string_view s) {
  if (s == "LM") return Filler::LM;
  if (s == "CB") return Filler::CB;
  if (s == "CG") return Filler::CG;
  throw ValidationError("unknown filler '" + std::string(s) + "' (expected LM, CB or CG)");
}

void MaterialConfig::validate() const {
  if (!(cnt_conc >= 1.0 && cnt_conc <= 5.0)) {
    throw ValidationError("cnt_conc must lie in [1.0, 5.0] mL/FA, got " + std::to_string(cnt_conc));
  }
}

std::string to_string(const MaterialConfig& m) {
  std::ostringstream ss;
  ss << to_string(m.filler) << "/" << m.cnt_conc;
  return ss.str();
}

void DeviceSpec::validate() const {
  if (active_layers < 1) throw ValidationError("active_layers must be >= 1");
  if (!(layer_thickness_um > 0.0)) throw ValidationError("layer_thickness must be > 0");
  if (!(active_length_mm > 0.0)) throw ValidationError("active_length must be > 0");
  if (!(electrode_width_mm > 0.0)) throw ValidationError("electrode_width must be > 0");
  if (!(mass_g > 0.0)) throw ValidationError("mass must be > 0");
  material.validate();
}

DeviceSpec DeviceSpec::test_sample(MaterialConfig material) {
  DeviceSpec s;
  s.material = material;
  return s;
}

DeviceSpec DeviceSpec::scaled() {
  DeviceSpec s;
  s.active_layers = 20;
  s.active_length_mm = 23.0;  // 2 mm stroke is 8.7 % axial strain
  s.reinforced = true;
  s.mass_g = 28.0 / 12.0;
  s.material = {Filler::CG, 2.9};
  return s;
}

void Drive::validate() const {
  if (!(field >= 0.0)) throw ValidationError("drive field must be >= 0");
  if (!(frequency > 0.0)) throw ValidationError("drive frequency must be > 0");
}

Calibration Calibration::from_config(const KeyValueConfig& cfg) {
  Calibration cal;
  cal.version = static_cast<int>(cfg.get_int("calibration_version", cal.version));
  for (const auto& [key, member] : kCalibrationKeys) cal.*member = cfg.get_double(key, cal.*member);
  cal.leakage_resistance_gohm = cfg.get_double("leakage_resistance_gohm", cal.leakage_resistance_gohm);
  return cal;
}

KeyValueConfig Calibration::to_config() const {
  KeyValueConfig cfg;
  cfg.set("calibration_version", std::to_string(version));
  for (const auto& [key, member] : kCalibrationKeys) {
    std::ostringstream ss;
    ss.precision(17);
    ss << this->*member;
    cfg.set(key, ss.str());
  }
  std::ostringstream ss;
  ss.precision(17);
  ss << leakage_resistance_gohm;
  cfg.set("leakage_resistance_gohm", ss.str());
  return cfg;
}

double strain(const Calibration& cal, double field) { return cal.strain_gain * field_law(cal, field); }

double static_material_gain(const Calibration& cal, const MaterialConfig& m) {
  const double z = (m.cnt_conc - cal.cnt_gain_peak) / cal.cnt_gain_width;
  return filler_gain(cal, m.filler) * std::exp(-z * z);
}

double response_gain(const Calibration& cal, const MaterialConfig& m, double frequency) {
  const double tau = cal.rc_tau_s * filler_rc(cal, m.filler) * std::pow(cal.rc_cnt_ref / m.cnt_conc, cal.rc_cnt_exponent);
  const double x = kTwoPi * frequency * tau;
  return 1.0 / std::sqrt(1.0 + x * x);
}

double displacement(const Calibration& cal, const DeviceSpec& spec, const DeviceState& state, double field) {
  if (state.failed) return 0.0;
  return strain(cal, field) * spec.active_length_mm * static_material_gain(cal, spec.material) *
         state.amplitude_factor;
}

double blocked_force(const Calibration& cal, const DeviceSpec& spec, const DeviceState& state, double field) {
  if (state.failed) return 0.0;
  const double reinforcement = spec.reinforced ? cal.reinforcement_force_factor : 1.0;
  return cal.force_gain * field_law(cal, field) * spec.active_layers * static_material_gain(cal, spec.material) *
         reinforcement * state.amplitude_factor;
}

double material_life_factor(const Calibration& cal, const MaterialConfig& m, double frequency) {
  const double w = anchor_weight(cal, frequency);
  double filler = 1.0;
  if (m.filler == Filler::LM) filler = geometric_blend(cal.life_lm_low, cal.life_lm_high, w);
  if (m.filler == Filler::CG) filler = geometric_blend(cal.life_cg_low, cal.life_cg_high, w);

  const double peak = (1.0 - w) * cal.cnt_life_peak_low + w * cal.cnt_life_peak_high;
  const double width = (1.0 - w) * cal.cnt_life_width_low + w * cal.cnt_life_width_high;
  const auto lorentz = [&](double c) {
    const double z = (c - peak) / width;
    return 1.0 / (1.0 + z * z);
  };
  return filler * lorentz(m.cnt_conc) / lorentz(cal.baseline_cnt);
}

double characteristic_life(const Calibration& cal, const MaterialConfig& m, const Drive& drive) {
  if (drive.field <= 0.0) return std::numeric_limits<double>::infinity();
  return cal.eta_ref_s * std::pow(drive.field / cal.ref_field, -cal.field_exponent) *
         std::pow(drive.frequency / cal.ref_frequency, cal.frequency_exponent) *
         material_life_factor(cal, m, drive.frequency);
}

DeviceState fresh_state(const Calibration& cal, std::uint64_t seed, std::optional<std::uint64_t> failure_seed) {
  DeviceState s;
  s.seed = seed;
  const CounterRng rng(failure_seed.value_or(seed), rng_stream::kFailure);
  // Weibull(shape, scale 1) by inversion
  s.failure_wear = std::pow(-std::log(rng.uniform(0)), 1.0 / cal.weibull_shape);
  return s;
}

DeviceState step_degradation(const Calibration& cal, const DeviceSpec& spec, const DeviceState& state,
                             const Drive& drive, double dt) {
  if (!(dt > 0.0)) throw ValidationError("step_degradation: dt must be > 0");
  return step_with_life(cal, state, drive.field, characteristic_life(cal, spec.material, drive), dt);
}

DeviceState step_with_life(const Calibration& cal, const DeviceState& state, double field, double eta, double dt) {
  DeviceState next = state;
  next.age_s = state.age_s + dt;
  if (state.failed || !std::isfinite(eta)) return next;

  const double dwear = dt / eta;
  double used = dwear;
  if (state.wear + dwear >= state.failure_wear) {
    used = state.failure_wear - state.wear;
    next.failed = true;
    next.failed_at_s = state.age_s + dt * (used / dwear);
  }
  next.wear = state.wear + used;
  next.amplitude_factor = std::pow(1.0 - cal.amplitude_loss_at_unit_wear, next.wear * next.wear);
  next.amplitude_factor = std::min(next.amplitude_factor, state.amplitude_factor);
  const double rel = field / cal.ref_field;
  next.capacitance_factor = state.capacitance_factor * std::exp(-cal.capacitance_loss_rate * rel * rel * used);
  return next;
}

double baseline_capacitance_nf(const Calibration& cal, const DeviceSpec& spec) {
  const double area_m2 = spec.active_length_mm * spec.electrode_width_mm * 1e-6;
  const double gap_m = spec.layer_thickness_um * 1e-6;
  return kVacuumPermittivity * cal.relative_permittivity * area_m2 * spec.active_layers / gap_m * 1e9;
}

double capacitance(const Calibration& cal, const DeviceSpec& spec, const DeviceState& state, double probe_freq) {
  if (!(probe_freq >= kProbeMinHz && probe_freq <= kProbeMaxHz)) {
    throw RangeError("probe frequency " + std::to_string(probe_freq) + " Hz outside [1 kHz, 1 MHz]");
  }
  const double rolloff = 1.0 - cal.capacitance_rolloff_per_decade * std::log10(probe_freq / kProbeMinHz);
  return baseline_capacitance_nf(cal, spec) * state.capacitance_factor * rolloff;
}

}  // namespace dealab::device
