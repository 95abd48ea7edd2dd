#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "dealab/devicemodel.hpp"
#include "dealab/hardware.hpp"

namespace dealab::rig {

struct SimulatorConfig {
  double travel_max_mm = 20.0;
  double contact_pos_mm = 5.0;      // linear position where the sensor meets the sample
  double sample_stiffness_n_per_mm = 0.6;
  double sensor_range_n = 10.0;
  double linear_speed_mm_s = 10.0;
  double rotary_time_s = 2.0;
  double impedance_point_time_s = 0.1;
  double lds_noise_mm = 0.002;
  double force_noise_n = 0.002;
  double mechanical_tau_s = 1e-3;
  double breakdown_current_ua = 3000.0;
};

/// Deliberate misbehaviour for exercising fault paths.
struct FaultInjection {
  bool rotary_timeout = false;
  bool linear_timeout = false;
  bool force_sensor_dead = false;
  bool isolation_stuck = false;  // relay never opens
};

/// Simulated channel hardware: one mounted synthetic DEA plus motion stage,
/// isolation relays and sensors.
class SimulatedBackend final : public HardwareAdapter {
 public:
  explicit SimulatedBackend(device::Calibration cal = device::Calibration::defaults(), SimulatorConfig cfg = {});

  void mount(const device::DeviceSpec& spec, std::uint64_t seed, std::optional<std::uint64_t> failure_seed = std::nullopt);
  void unmount();
  [[nodiscard]] bool mounted() const { return mounted_; }

  [[nodiscard]] const device::DeviceState& device_state() const { return state_; }
  [[nodiscard]] const device::DeviceSpec& device_spec() const { return spec_; }
  [[nodiscard]] const device::Calibration& calibration() const { return cal_; }
  [[nodiscard]] const SimulatorConfig& config() const { return cfg_; }
  [[nodiscard]] RotaryPosition rotary() const { return rotary_; }
  [[nodiscard]] double linear_position() const { return linear_pos_; }

  FaultInjection faults;
  /// Called after every wait with the new simulated time (wall-clock pacing hook).
  std::function<void(double)> pacer;

  void set_voltage(const std::optional<VoltageProgram>& program) override;
  [[nodiscard]] double read_voltage() override;
  [[nodiscard]] double read_current() override;
  [[nodiscard]] std::optional<double> read_displacement() override;
  [[nodiscard]] std::optional<double> read_force() override;
  void move_rotary(RotaryPosition pos) override;
  void move_linear(double pos_mm) override;
  void set_isolation(bool isolated) override;
  [[nodiscard]] bool isolated() override { return isolated_; }
  [[nodiscard]] double impedance_point(double probe_hz) override;
  [[nodiscard]] waveform::SwitchState switch_state() override;
  void wait(double seconds) override;
  [[nodiscard]] double now() const override { return now_; }

 private:
  [[nodiscard]] bool output_high() const;
  [[nodiscard]] double program_time() const;
  [[nodiscard]] bool drive_reaches_device() const;
  [[nodiscard]] double clamp_preload() const;
  void advance(double dt);

  device::Calibration cal_;
  SimulatorConfig cfg_;
  device::DeviceSpec spec_{};
  device::DeviceState state_{};
  bool mounted_ = false;

  double now_ = 0.0;
  std::optional<VoltageProgram> program_;
  double program_set_at_ = 0.0;
  double life_s_ = 0.0;           // characteristic life under the current program
  double response_ = 1.0;         // electrode path gain at the program frequency
  bool isolated_ = false;
  RotaryPosition rotary_ = RotaryPosition::UnderLDS;
  double linear_pos_ = 0.0;
  double stroke_ = 0.0;           // lagged mechanical displacement, mm
  std::uint64_t reads_ = 0;
};

}  // namespace dealab::rig
