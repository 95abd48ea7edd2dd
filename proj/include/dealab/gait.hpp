#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "dealab/config.hpp"
#include "dealab/devicemodel.hpp"

// Kinematics of one locomotion unit: octagonal frame, leg on a central block,
// three linear DEAs pulling on the block. Angles are degrees at this
// interface and radians inside.

namespace dealab::gait {

struct UnitGeometry {
  double h = 40.0;            // frame height, mm
  double b = 40.0;            // frame width, mm
  double l = 30.0;            // leg length, mm
  double theta_l_deg = 30.0;  // leg attachment angle

  void validate() const;
  static UnitGeometry from_config(const KeyValueConfig& cfg);
};

struct ActuatorDrive {
  double e1 = 0.0, e2 = 0.0, e3 = 0.0;  // elongations, mm
  double F1 = 0.0, F2 = 0.0, F3 = 0.0;  // forces, N
};

struct Pose {
  double h_c = 0.0;  // block height over the frame bottom
  double w_c = 0.0;  // block distance from the pivot corner
  double delta_h = 0.0;
  double delta_l = 0.0;
  double delta_w = 0.0;
  double d = 0.0;  // distance between the two ground contacts
  double theta_b_deg = 0.0;

  friend bool operator==(const Pose&, const Pose&) = default;
};

struct BodyForces {
  double F_x = 0.0;
  double F_y = 0.0;

  friend bool operator==(const BodyForces&, const BodyForces&) = default;
};

/// The vertical force as printed uses F2 cos(theta_b) in its second term;
/// Corrected swaps that for F2 sin(theta_b).
enum class ForceMode { AsPrinted, Corrected };
[[nodiscard]] ForceMode parse_force_mode(std::string_view s);

/// Throws GeometryError when the leg does not reach below the frame or the
/// contact triangle is degenerate.
[[nodiscard]] Pose pose(const UnitGeometry& geom, const ActuatorDrive& drive);
[[nodiscard]] BodyForces body_forces(const Pose& p, const ActuatorDrive& drive, ForceMode mode = ForceMode::AsPrinted);

struct GaitPhase {
  std::array<bool, 3> active{};  // DEA 1..3
  double fraction = 0.0;         // of one walking cycle
};

struct GaitSchedule {
  std::vector<GaitPhase> phases;
  double cycle_freq = 1.0;  // Hz, inverse of one complete walking cycle

  void validate() const;
  [[nodiscard]] double period() const { return 1.0 / cycle_freq; }
  /// Start time of every phase after the first, s.
  [[nodiscard]] std::vector<double> phase_boundaries() const;
};

/// Three-step open-loop cycle: {1}, {1,2}, {3}.
[[nodiscard]] GaitSchedule walk_cycle_schedule(double cycle_freq,
                                               std::array<double, 3> fractions = {1.0 / 3, 1.0 / 3, 1.0 / 3});

struct CycleStep {
  int unit = 0;
  int phase = 0;
  double t_start = 0.0;
  ActuatorDrive drive;
  Pose pose;
  BodyForces forces;
};

/// Pose and internal forces for every phase of one cycle, for each unit of
/// an assembly. All units share the three switching channels, hence the same sequence.
[[nodiscard]] std::vector<CycleStep> simulate_cycle(const UnitGeometry& geom, const device::Calibration& cal,
                                                    const device::DeviceSpec& dea, double field,
                                                    const GaitSchedule& schedule, int units = 1,
                                                    ForceMode mode = ForceMode::AsPrinted);

}  // namespace dealab::gait
