#include "dealab/sim_backend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dealab/errors.hpp"
#include "dealab/rng.hpp"

namespace dealab::rig {

std::string_view to_string(RotaryPosition p) {
  return p == RotaryPosition::UnderLDS ? "UnderLDS" : "UnderForceSensor";
}

std::string_view to_string(AdapterFault f) {
  switch (f) {
    case AdapterFault::MotorTimeout: return "motor-timeout";
    case AdapterFault::Sensor: return "sensor";
    case AdapterFault::Overtravel: return "overtravel";
    case AdapterFault::Isolation: return "isolation";
    case AdapterFault::Storage: return "storage";
  }
  return "?";
}

SimulatedBackend::SimulatedBackend(device::Calibration cal, SimulatorConfig cfg) : cal_(cal), cfg_(cfg) {}

void SimulatedBackend::mount(const device::DeviceSpec& spec, std::uint64_t seed,
                             std::optional<std::uint64_t> failure_seed) {
  spec.validate();
  spec_ = spec;
  state_ = device::fresh_state(cal_, seed, failure_seed);
  mounted_ = true;
  stroke_ = 0.0;
  reads_ = 0;
  if (program_) set_voltage(program_);
}

void SimulatedBackend::unmount() {
  mounted_ = false;
  stroke_ = 0.0;
}

double SimulatedBackend::program_time() const {
  return program_ ? program_->program_time + (now_ - program_set_at_) : 0.0;
}

bool SimulatedBackend::output_high() const {
  if (!program_) return false;
  const double t = program_time();
  return t >= 0.0 && t <= program_->waveform.duration && waveform::is_high(program_->waveform, t);
}

bool SimulatedBackend::drive_reaches_device() const {
  return mounted_ && program_ && !isolated_ && program_->waveform.field > 0.0;
}

double SimulatedBackend::clamp_preload() const {
  if (rotary_ != RotaryPosition::UnderForceSensor || !mounted_) return 0.0;
  return cfg_.sample_stiffness_n_per_mm * std::max(0.0, linear_pos_ - cfg_.contact_pos_mm);
}

void SimulatedBackend::set_voltage(const std::optional<VoltageProgram>& program) {
  if (program) program->waveform.validate();
  program_ = program;
  program_set_at_ = now_;
  life_s_ = std::numeric_limits<double>::infinity();
  response_ = 1.0;
  if (program_ && mounted_) {
    const double f = waveform::instantaneous_frequency(program_->waveform, std::clamp(program_->program_time, 0.0, program_->waveform.duration));
    life_s_ = device::characteristic_life(cal_, spec_.material, {program_->waveform.field, f});
    response_ = device::response_gain(cal_, spec_.material, f);
  }
}

void SimulatedBackend::advance(double dt) {
  if (dt <= 0.0) return;
  if (drive_reaches_device()) {
    const auto& w = program_->waveform;
    if (w.kind == waveform::Kind::FrequencySweep) {
      const double f = waveform::instantaneous_frequency(w, std::clamp(program_time() + 0.5 * dt, 0.0, w.duration));
      life_s_ = device::characteristic_life(cal_, spec_.material, {w.field, f});
      response_ = device::response_gain(cal_, spec_.material, f);
    }
    state_ = device::step_with_life(cal_, state_, w.field, life_s_, dt);
  } else if (mounted_) {
    state_.age_s += dt;
  }
  now_ += dt;

  double target = 0.0;
  const bool blocked = clamp_preload() > 0.0;
  if (drive_reaches_device() && !blocked && output_high()) {
    target = device::displacement(cal_, spec_, state_, program_->waveform.field) * response_;
  }
  stroke_ += (target - stroke_) * -std::expm1(-dt / cfg_.mechanical_tau_s);
  if (pacer) pacer(now_);
}

void SimulatedBackend::wait(double seconds) { advance(seconds); }

double SimulatedBackend::read_voltage() {
  return output_high() ? program_->waveform.field * program_->layer_thickness_um : 0.0;
}

double SimulatedBackend::read_current() {
  const CounterRng rng(state_.seed, rng_stream::kCurrentNoise);
  const double noise = 0.05 * rng.normal(reads_++);
  if (!drive_reaches_device()) return noise;
  if (state_.failed) return cfg_.breakdown_current_ua + noise;
  const double volts = program_->waveform.field * program_->layer_thickness_um;
  const double c_farad = device::baseline_capacitance_nf(cal_, spec_) * state_.capacitance_factor * 1e-9;
  const double f = waveform::instantaneous_frequency(program_->waveform, std::clamp(program_time(), 0.0, program_->waveform.duration));
  const double charging = 2.0 * c_farad * volts * f * 1e6;
  const double leakage = output_high() ? volts / (cal_.leakage_resistance_gohm * 1e3) : 0.0;
  return charging + leakage + noise;
}

std::optional<double> SimulatedBackend::read_displacement() {
  if (!mounted_ || rotary_ != RotaryPosition::UnderLDS) return std::nullopt;
  const CounterRng rng(state_.seed, rng_stream::kDisplacementNoise);
  return stroke_ + cfg_.lds_noise_mm * rng.normal(reads_++);
}

std::optional<double> SimulatedBackend::read_force() {
  if (faults.force_sensor_dead) return std::nullopt;
  double force = clamp_preload();
  if (force > 0.0 && drive_reaches_device() && output_high()) {
    force += device::blocked_force(cal_, spec_, state_, program_->waveform.field) * response_;
  }
  const CounterRng rng(state_.seed, rng_stream::kForceNoise);
  force += cfg_.force_noise_n * rng.normal(reads_++);
  return std::clamp(force, -cfg_.sensor_range_n, cfg_.sensor_range_n);
}

void SimulatedBackend::move_rotary(RotaryPosition pos) {
  if (pos == rotary_) return;
  if (faults.rotary_timeout) {
    advance(cfg_.rotary_time_s);
    throw AdapterError(AdapterFault::MotorTimeout, "rotary stage did not reach position");
  }
  if (linear_pos_ > cfg_.contact_pos_mm) {
    throw AdapterError(AdapterFault::MotorTimeout, "rotary stage blocked by lowered force sensor");
  }
  advance(cfg_.rotary_time_s);
  rotary_ = pos;
}

void SimulatedBackend::move_linear(double pos_mm) {
  if (pos_mm < 0.0 || pos_mm > cfg_.travel_max_mm) {
    throw AdapterError(AdapterFault::Overtravel, "linear target " + std::to_string(pos_mm) + " mm outside travel");
  }
  if (faults.linear_timeout) throw AdapterError(AdapterFault::MotorTimeout, "linear stage did not reach position");
  advance(std::abs(pos_mm - linear_pos_) / cfg_.linear_speed_mm_s);
  linear_pos_ = pos_mm;
}

void SimulatedBackend::set_isolation(bool isolated) {
  advance(0.01);
  if (isolated && faults.isolation_stuck) return;
  isolated_ = isolated;
}

double SimulatedBackend::impedance_point(double probe_hz) {
  if (!isolated_) throw InterlockViolation("LCR probe refused: HV path not isolated");
  if (!mounted_) throw AdapterError(AdapterFault::Sensor, "no device mounted");
  const double c = device::capacitance(cal_, spec_, state_, probe_hz);
  advance(cfg_.impedance_point_time_s);
  return c;
}

waveform::SwitchState SimulatedBackend::switch_state() {
  if (isolated_) return {false, false};
  if (!program_) return {false, true};
  return waveform::switch_schedule(program_->waveform, std::clamp(program_time(), 0.0, program_->waveform.duration));
}

}  // namespace dealab::rig
