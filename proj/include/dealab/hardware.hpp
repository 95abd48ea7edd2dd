#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dealab/waveform.hpp"

// Command/response boundary between a channel controller and its instruments.
// A serial-instrument backend implements this; the shipped one is simulation.

namespace dealab::rig {

enum class RotaryPosition { UnderLDS, UnderForceSensor };
[[nodiscard]] std::string_view to_string(RotaryPosition p);

enum class AdapterFault { MotorTimeout, Sensor, Overtravel, Isolation, Storage };
[[nodiscard]] std::string_view to_string(AdapterFault f);

class AdapterError : public std::runtime_error {
 public:
  AdapterError(AdapterFault kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] AdapterFault kind() const noexcept { return kind_; }

 private:
  AdapterFault kind_;
};

/// What the programmable supply generates. The program clock starts at
/// `program_time`, so a drive can resume mid-waveform.
struct VoltageProgram {
  waveform::WaveformSpec waveform;
  double layer_thickness_um = 30.0;
  double program_time = 0.0;
};

class HardwareAdapter {
 public:
  virtual ~HardwareAdapter() = default;

  /// nullopt drives the output to 0 V with the discharge path closed.
  virtual void set_voltage(const std::optional<VoltageProgram>& program) = 0;
  [[nodiscard]] virtual double read_voltage() = 0;  // V, supply monitor
  [[nodiscard]] virtual double read_current() = 0;  // uA, supply monitor
  /// nullopt when the LDS has no target.
  [[nodiscard]] virtual std::optional<double> read_displacement() = 0;
  /// nullopt when the force sensor returns no reading.
  [[nodiscard]] virtual std::optional<double> read_force() = 0;
  virtual void move_rotary(RotaryPosition pos) = 0;
  virtual void move_linear(double pos_mm) = 0;
  virtual void set_isolation(bool isolated) = 0;
  /// Relay state as read back, not as commanded.
  [[nodiscard]] virtual bool isolated() = 0;
  /// One LCR probe point, nF. Hardware refuses while HV is connected.
  [[nodiscard]] virtual double impedance_point(double probe_hz) = 0;
  [[nodiscard]] virtual waveform::SwitchState switch_state() = 0;

  /// Lets `seconds` of instrument time pass.
  virtual void wait(double seconds) = 0;
  [[nodiscard]] virtual double now() const = 0;
};

}  // namespace dealab::rig
