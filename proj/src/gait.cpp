#include "dealab/gait.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dealab/errors.hpp"

namespace dealab::gait {

namespace {

constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
constexpr double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

}  // namespace

void UnitGeometry::validate() const {
  if (!(h > 0.0 && b > 0.0 && l > 0.0)) throw ValidationError("unit geometry lengths must be positive");
  if (!(theta_l_deg > 0.0 && theta_l_deg < 90.0)) throw ValidationError("theta_l must lie in (0, 90) degrees");
}

UnitGeometry UnitGeometry::from_config(const KeyValueConfig& cfg) {
  UnitGeometry g;
  g.h = cfg.get_double("h_mm", g.h);
  g.b = cfg.get_double("b_mm", g.b);
  g.l = cfg.get_double("l_mm", g.l);
  g.theta_l_deg = cfg.get_double("theta_l_deg", g.theta_l_deg);
  g.validate();
  return g;
}

ForceMode parse_force_mode(std::string_view s) {
  if (s == "printed" || s == "as_printed") return ForceMode::AsPrinted;
  if (s == "corrected") return ForceMode::Corrected;
  throw ValidationError("unknown force mode '" + std::string(s) + "' (expected printed or corrected)");
}

Pose pose(const UnitGeometry& geom, const ActuatorDrive& drive) {
  const double theta_l = deg2rad(geom.theta_l_deg);
  Pose p;
  p.h_c = geom.h / 2.0 - drive.e1 + drive.e3;
  p.w_c = geom.b / 2.0 + drive.e2;
  p.delta_h = geom.l * std::cos(theta_l) - p.h_c;
  if (!(p.delta_h > 0.0)) {
    throw GeometryError("leg does not extend below the frame (delta_h = " + std::to_string(p.delta_h) + " mm)");
  }
  p.delta_l = p.delta_h / std::cos(theta_l);
  p.delta_w = p.w_c + (geom.l - p.delta_l) * std::sin(theta_l);

  // contact triangle; the included angle is theta_l + 90 degrees
  const double included = theta_l + std::numbers::pi / 2.0;
  const double d2 = p.delta_l * p.delta_l + p.delta_w * p.delta_w - 2.0 * p.delta_l * p.delta_w * std::cos(included);
  p.d = std::sqrt(std::max(d2, 0.0));
  if (!(p.d > 0.0)) throw GeometryError("contact points coincide (d = 0)");
  const double s = p.delta_l * std::sin(included) / p.d;
  if (s < -1.0 || s > 1.0) throw GeometryError("degenerate contact geometry: arcsin argument " + std::to_string(s));
  p.theta_b_deg = rad2deg(std::asin(s));
  return p;
}

BodyForces body_forces(const Pose& p, const ActuatorDrive& drive, ForceMode mode) {
  const double tb = deg2rad(p.theta_b_deg);
  const double s = std::sin(tb);
  const double c = std::cos(tb);
  const double net = -drive.F1 + drive.F3;
  BodyForces f;
  f.F_x = net * s - drive.F2 * c;
  f.F_y = mode == ForceMode::AsPrinted ? net * c - drive.F2 * c : net * c - drive.F2 * s;
  return f;
}

void GaitSchedule::validate() const {
  if (!(cycle_freq > 0.0)) throw ValidationError("cycle frequency must be > 0");
  if (phases.empty()) throw ValidationError("gait schedule needs at least one phase");
  double sum = 0.0;
  for (const auto& ph : phases) {
    if (!(ph.fraction > 0.0)) throw ValidationError("phase fractions must be positive");
    sum += ph.fraction;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("phase fractions must sum to 1");
}

std::vector<double> GaitSchedule::phase_boundaries() const {
  std::vector<double> out;
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < phases.size(); ++i) {
    acc += phases[i].fraction;
    out.push_back(acc * period());
  }
  return out;
}

GaitSchedule walk_cycle_schedule(double cycle_freq, std::array<double, 3> fractions) {
  GaitSchedule s;
  s.cycle_freq = cycle_freq;
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (!(total > 0.0)) throw ValidationError("phase fractions must be positive");
  s.phases = {
      {{true, false, false}, fractions[0] / total},
      {{true, true, false}, fractions[1] / total},
      {{false, false, true}, fractions[2] / total},
  };
  s.validate();
  return s;
}

std::vector<CycleStep> simulate_cycle(const UnitGeometry& geom, const device::Calibration& cal,
                                      const device::DeviceSpec& dea, double field, const GaitSchedule& schedule,
                                      int units, ForceMode mode) {
  geom.validate();
  schedule.validate();
  if (units < 1) throw ValidationError("assembly needs at least one unit");

  // ideal DEAs: each active actuator delivers its full stroke and blocked force
  const auto fresh = device::DeviceState{};
  const double stroke = device::displacement(cal, dea, fresh, field);
  const double force = device::blocked_force(cal, dea, fresh, field);

  std::vector<CycleStep> out;
  out.reserve(schedule.phases.size() * static_cast<std::size_t>(units));
  for (int u = 0; u < units; ++u) {
    double t = 0.0;
    for (std::size_t k = 0; k < schedule.phases.size(); ++k) {
      const auto& ph = schedule.phases[k];
      CycleStep step;
      step.unit = u;
      step.phase = static_cast<int>(k);
      step.t_start = t;
      step.drive = {ph.active[0] ? stroke : 0.0, ph.active[1] ? stroke : 0.0, ph.active[2] ? stroke : 0.0,
                    ph.active[0] ? force : 0.0,  ph.active[1] ? force : 0.0,  ph.active[2] ? force : 0.0};
      step.pose = pose(geom, step.drive);
      step.forces = body_forces(step.pose, step.drive, mode);
      out.push_back(step);
      t += ph.fraction * schedule.period();
    }
  }
  return out;
}

}  // namespace dealab::gait
