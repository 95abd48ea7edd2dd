#include "dealab/rig.hpp"

#include <cmath>
#include <sstream>

#include "dealab/errors.hpp"

namespace dealab::rig {

namespace {

std::string fmt_force(double n) {
  std::ostringstream ss;
  ss.precision(4);
  ss << n << " N";
  return ss.str();
}

bool legal(ChannelMode from, ChannelMode to) {
  using M = ChannelMode;
  if (to == M::Faulted) return true;
  switch (from) {
    case M::Idle:
    case M::ActuatingDisplacement:
    case M::MeasuringForce:
    case M::ImpedanceSweep: return to == M::SwitchingStage;
    case M::SwitchingStage:
      return to == M::ActuatingDisplacement || to == M::ClampingForce || to == M::ImpedanceSweep || to == M::Idle;
    case M::ClampingForce: return to == M::MeasuringForce;
    case M::Faulted: return to == M::Idle;
  }
  return false;
}

}  // namespace

std::string_view to_string(ChannelMode m) {
  switch (m) {
    case ChannelMode::Idle: return "Idle";
    case ChannelMode::ActuatingDisplacement: return "ActuatingDisplacement";
    case ChannelMode::SwitchingStage: return "SwitchingStage";
    case ChannelMode::ClampingForce: return "ClampingForce";
    case ChannelMode::MeasuringForce: return "MeasuringForce";
    case ChannelMode::ImpedanceSweep: return "ImpedanceSweep";
    case ChannelMode::Faulted: return "Faulted";
  }
  return "?";
}

ChannelMode parse_channel_mode(std::string_view s) {
  for (auto m : {ChannelMode::Idle, ChannelMode::ActuatingDisplacement, ChannelMode::SwitchingStage,
                 ChannelMode::ClampingForce, ChannelMode::MeasuringForce, ChannelMode::ImpedanceSweep,
                 ChannelMode::Faulted}) {
    if (to_string(m) == s) return m;
  }
  throw ValidationError("unknown channel mode '" + std::string(s) + "'");
}

std::string_view to_string(MeasurementTarget t) {
  switch (t) {
    case MeasurementTarget::Displacement: return "displacement";
    case MeasurementTarget::Force: return "force";
    case MeasurementTarget::Impedance: return "impedance";
  }
  return "?";
}

MeasurementTarget parse_measurement_target(std::string_view s) {
  if (s == "displacement") return MeasurementTarget::Displacement;
  if (s == "force") return MeasurementTarget::Force;
  if (s == "impedance") return MeasurementTarget::Impedance;
  throw ValidationError("unknown measurement target '" + std::string(s) + "'");
}

std::string_view to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::Complete: return "Complete";
    case TrialStatus::Aborted: return "Aborted";
    case TrialStatus::Faulted: return "Faulted";
  }
  return "?";
}

TrialStatus parse_trial_status(std::string_view s) {
  if (s == "Complete") return TrialStatus::Complete;
  if (s == "Aborted") return TrialStatus::Aborted;
  if (s == "Faulted") return TrialStatus::Faulted;
  throw ValidationError("unknown trial status '" + std::string(s) + "'");
}

void TrialProtocol::validate() const {
  lifetime.validate();
  if (!(sample_rate_hz >= 10.0)) throw ValidationError("sample rate must be >= 10 Hz");
  if (force_check_interval_s < 0.0 || !(force_check_duration_s > 0.0)) {
    throw ValidationError("force check interval must be >= 0 and duration > 0");
  }
  if (!(bias_force_n > 0.0)) throw ValidationError("bias force must be > 0");
}

double TrialProtocol::acquisition_rate(double drive_freq) const { return std::max(sample_rate_hz, 4.0 * drive_freq); }

Channel::Channel(int id, HardwareAdapter& adapter, RigConfig cfg) : id_(id), hw_(adapter), cfg_(cfg) {
  isolated_ = hw_.isolated();
}

void Channel::log(std::string kind, std::string detail) {
  events_.push_back({hw_.now(), std::move(kind), std::move(detail)});
  if (event_sink_) event_sink_(id_, events_.back());
}

void Channel::transition(ChannelMode to) {
  const ChannelMode from = mode_.load();
  if (!legal(from, to)) {
    throw std::logic_error("illegal channel transition " + std::string(to_string(from)) + " -> " +
                           std::string(to_string(to)));
  }
  if (to == ChannelMode::ImpedanceSweep && !hw_.isolated()) {
    throw std::logic_error("ImpedanceSweep entered without HV isolation");
  }
  mode_ = to;
}

void Channel::enter_fault(const AdapterError& e) {
  try {
    hw_.set_voltage(std::nullopt);
  } catch (...) {
  }
  hv_live_ = false;
  fault_ = e.kind();
  mode_ = ChannelMode::Faulted;
  log("fault", std::string(to_string(e.kind())) + ": " + e.what());
  throw RigFault(e.kind(), std::string(to_string(e.kind())) + ": " + e.what());
}

void Channel::zero_hv() {
  hw_.set_voltage(std::nullopt);
  hv_live_ = false;
  log("hv-zeroed");
}

void Channel::release_clamp() {
  if (stage_.linear_pos > 0.0) {
    hw_.move_linear(0.0);
    stage_.linear_pos = 0.0;
    stage_.clamp_force = 0.0;
    log("clamp-released");
  }
}

void Channel::switch_mode(MeasurementTarget target, double bias_n) {
  if (mode_ == ChannelMode::Faulted) throw RigStateError("channel " + std::to_string(id_) + " is faulted");
  if (target == MeasurementTarget::Impedance && hv_live_) {
    log("interlock-violation", "impedance requested while HV live");
    throw InterlockViolation("interlock: HV is live on channel " + std::to_string(id_));
  }
  try {
    transition(ChannelMode::SwitchingStage);
    zero_hv();
    release_clamp();

    if (target == MeasurementTarget::Impedance) {
      hw_.set_isolation(true);
      isolated_ = hw_.isolated();
      if (!isolated_) {
        log("interlock-violation", "isolation relay did not open");
        throw AdapterError(AdapterFault::Isolation, "interlock: isolation relay did not open");
      }
      log("hv-isolated");
    } else if (hw_.isolated()) {
      hw_.set_isolation(false);
      isolated_ = hw_.isolated();
      log("hv-connected");
    }

    std::optional<RotaryPosition> pos;
    if (target == MeasurementTarget::Displacement) pos = RotaryPosition::UnderLDS;
    if (target == MeasurementTarget::Force) pos = RotaryPosition::UnderForceSensor;
    if (pos && *pos != stage_.rotary) {
      hw_.move_rotary(*pos);
      stage_.rotary = *pos;
      log("rotary-moved", std::string(to_string(*pos)));
    }

    switch (target) {
      case MeasurementTarget::Displacement: transition(ChannelMode::ActuatingDisplacement); break;
      case MeasurementTarget::Impedance: transition(ChannelMode::ImpedanceSweep); break;
      case MeasurementTarget::Force:
        transition(ChannelMode::ClampingForce);
        clamp_with_feedback(bias_n);
        transition(ChannelMode::MeasuringForce);
        break;
    }
    log("mode-entered", std::string(to_string(mode_.load())));
  } catch (const AdapterError& e) {
    enter_fault(e);
  }
}

ClampResult Channel::clamp_with_feedback(double bias_n) {
  if (mode_ == ChannelMode::Faulted) throw RigStateError("channel " + std::to_string(id_) + " is faulted");
  if (stage_.rotary != RotaryPosition::UnderForceSensor) {
    throw RigStateError("clamp requires the sample under the force sensor");
  }
  ClampResult r;
  try {
    double pos = stage_.linear_pos;
    for (;;) {
      const auto reading = hw_.read_force();
      if (!reading) throw AdapterError(AdapterFault::Sensor, "force sensor returned no reading");
      if (*reading >= bias_n) {
        r.clamp_force = *reading;
        break;
      }
      const double next = pos + cfg_.clamp_step_mm;
      if (next > cfg_.travel_max_mm + 1e-9) {
        throw AdapterError(AdapterFault::Overtravel, "travel exhausted before reaching " + fmt_force(bias_n));
      }
      hw_.move_linear(next);
      pos = next;
      stage_.linear_pos = pos;
      ++r.steps;
    }
  } catch (const AdapterError& e) {
    enter_fault(e);
  }
  r.linear_pos = stage_.linear_pos;
  stage_.clamp_force = r.clamp_force;
  log("clamp-converged", fmt_force(r.clamp_force));
  return r;
}

std::vector<analysis::SweepPoint> Channel::impedance_sweep() {
  if (mode_ == ChannelMode::Faulted) throw RigStateError("channel " + std::to_string(id_) + " is faulted");
  if (hv_live_ || !hw_.isolated()) {
    log("interlock-violation", "impedance sweep without HV isolation");
    throw InterlockViolation("interlock: impedance sweep requires HV isolation");
  }
  if (mode_ != ChannelMode::ImpedanceSweep) throw RigStateError("impedance sweep requires ImpedanceSweep mode");

  const int n = std::max(cfg_.impedance_points, 2);
  std::vector<analysis::SweepPoint> out;
  out.reserve(static_cast<std::size_t>(n));
  try {
    for (int i = 0; i < n; ++i) {
      const double f = 1e3 * std::pow(1e3, static_cast<double>(i) / (n - 1));
      out.push_back({f, hw_.impedance_point(f)});
      emit(sample(hw_.now() - trial_start_));
    }
  } catch (const AdapterError& e) {
    enter_fault(e);
  }
  log("impedance-sweep", std::to_string(n) + " points");
  return out;
}

void Channel::start_drive(const waveform::WaveformSpec& spec, double layer_thickness_um) {
  const auto m = mode_.load();
  if (m != ChannelMode::ActuatingDisplacement && m != ChannelMode::MeasuringForce) {
    throw RigStateError("drive requires ActuatingDisplacement or MeasuringForce mode");
  }
  spec.validate();
  try {
    hw_.set_voltage(VoltageProgram{spec, layer_thickness_um, 0.0});
  } catch (const AdapterError& e) {
    enter_fault(e);
  }
  hv_live_ = true;
  log("hv-on", std::to_string(spec.field) + " V/um");
}

void Channel::stop_drive() {
  if (mode_ == ChannelMode::Faulted) return;
  zero_hv();
}

TelemetrySample Channel::sample(double trial_t) {
  TelemetrySample s;
  s.t = trial_t;
  s.channel = id_;
  s.mode = mode_.load();
  s.voltage = hw_.read_voltage();
  s.current = hw_.read_current();
  if (s.mode == ChannelMode::ActuatingDisplacement) s.displacement = hw_.read_displacement();
  if (s.mode == ChannelMode::MeasuringForce) {
    s.force = hw_.read_force();
    if (!s.force) throw AdapterError(AdapterFault::Sensor, "force sensor returned no reading");
  }
  s.clamp_force = stage_.clamp_force;
  s.hv_isolated = hw_.isolated();
  return s;
}

void Channel::emit(const TelemetrySample& s) {
  if (sink_) sink_(s);
}

void Channel::acquire(double seconds, double rate_hz) {
  if (mode_ == ChannelMode::Faulted) throw RigStateError("channel " + std::to_string(id_) + " is faulted");
  const double dt = 1.0 / rate_hz;
  const auto n = static_cast<long long>(std::floor(seconds * rate_hz + 1e-9));
  try {
    for (long long k = 0; k < n; ++k) {
      hw_.wait(dt);
      emit(sample(hw_.now() - trial_start_));
    }
  } catch (const AdapterError& e) {
    enter_fault(e);
  }
}

void Channel::park() {
  if (mode_ == ChannelMode::Faulted) throw RigStateError("channel " + std::to_string(id_) + " is faulted");
  if (mode_ == ChannelMode::Idle && !hv_live_ && !hw_.isolated() && stage_.linear_pos == 0.0) return;
  try {
    transition(ChannelMode::SwitchingStage);
    zero_hv();
    release_clamp();
    if (hw_.isolated()) {
      hw_.set_isolation(false);
      isolated_ = hw_.isolated();
      log("hv-connected");
    }
    transition(ChannelMode::Idle);
    log("mode-entered", "Idle");
  } catch (const AdapterError& e) {
    enter_fault(e);
  }
}

void Channel::reset_fault() {
  if (mode_ != ChannelMode::Faulted) throw RigStateError("channel " + std::to_string(id_) + " is not faulted");
  try {
    hw_.set_voltage(std::nullopt);
  } catch (...) {
  }
  hv_live_ = false;
  isolated_ = hw_.isolated();
  fault_.reset();
  transition(ChannelMode::Idle);
  log("fault-reset");
}

TrialOutcome Channel::run_trial(const TrialRequest& req, const std::atomic<bool>* abort) {
  if (mode_ != ChannelMode::Idle) {
    throw RigStateError("trial requires an Idle channel (mode " + std::string(to_string(mode_.load())) + ")");
  }
  req.protocol.validate();
  const auto& proto = req.protocol;
  const double cap = proto.lifetime.cap;
  const auto wave = waveform::WaveformSpec::dc_square(req.field, req.frequency, cap, req.duty);

  TrialOutcome out;
  trial_start_ = hw_.now();
  log("trial-started", std::to_string(req.field) + " V/um @ " + std::to_string(req.frequency) + " Hz");

  const double dt = 1.0 / proto.acquisition_rate(req.frequency);
  analysis::CycleAmplitudeReducer reducer(req.frequency, 0.0);
  analysis::LifetimeTracker tracker(proto.lifetime);
  std::optional<double> abort_t;
  double act = 0.0;  // actuation clock, s with HV applied
  long long k = 0;   // sample index on the actuation clock

  const auto drive_on = [&] {
    hw_.set_voltage(VoltageProgram{wave, req.layer_thickness_um, act});
    hv_live_ = true;
    log("hv-on", std::to_string(req.field) + " V/um");
  };

  // Acquire one sample on the actuation clock; returns false when the trial must end.
  const auto step = [&]() -> bool {
    const double next = (static_cast<double>(k) + 0.5) * dt;
    hw_.wait(next - act);
    act = next;
    ++k;
    const TelemetrySample s = sample(hw_.now() - trial_start_);
    emit(s);
    ++out.samples;
    if (s.current > cfg_.current_trip_ua) {
      out.hard_failure_t = act;
      log("breakdown", "current " + std::to_string(s.current) + " uA");
      return false;
    }
    if (s.displacement) {
      if (auto c = reducer.push(act, *s.displacement)) {
        out.amplitudes.push_back(*c);
        tracker.push(*c);
      }
    }
    if (s.force) {
      if (out.force_peaks.empty() || mode_ == ChannelMode::MeasuringForce) {
        if (out.force_peaks.empty()) out.force_peaks.push_back(*s.force);
        out.force_peaks.back() = std::max(out.force_peaks.back(), *s.force);
      }
    }
    if (abort && abort->load()) {
      abort_t = act;
      return false;
    }
    if (act >= cap) return false;
    if (proto.stop_on_threshold && tracker.confirmed_crossing()) return false;
    return true;
  };

  try {
    if (proto.pre_sweep) {
      switch_mode(MeasurementTarget::Impedance);
      out.pre_sweep = impedance_sweep();
    }
    switch_mode(MeasurementTarget::Displacement);
    drive_on();

    double next_check = proto.force_check_interval_s > 0.0 ? proto.force_check_interval_s : cap * 2.0;
    bool running = true;
    while (running) {
      running = step();
      if (running && act >= next_check) {
        switch_mode(MeasurementTarget::Force, proto.bias_force_n);
        drive_on();
        out.force_peaks.push_back(0.0);
        const double until = act + proto.force_check_duration_s;
        while (running && act < until) running = step();
        if (running) {
          switch_mode(MeasurementTarget::Displacement);
          drive_on();
        }
        next_check += proto.force_check_interval_s;
      }
    }

    zero_hv();
    if (proto.post_sweep) {
      switch_mode(MeasurementTarget::Impedance);
      out.post_sweep = impedance_sweep();
    }
    park();
  } catch (const RigFault& e) {
    out.status = TrialStatus::Faulted;
    out.fault_reason = e.what();
    out.partial = true;
  } catch (const AdapterError& e) {
    try {
      enter_fault(e);
    } catch (const RigFault& f) {
      out.status = TrialStatus::Faulted;
      out.fault_reason = f.what();
      out.partial = true;
    }
  }
  if (out.status == TrialStatus::Complete && abort_t) {
    out.status = TrialStatus::Aborted;
    out.partial = true;
  }

  out.actuation_time = act;
  out.duration = hw_.now() - trial_start_;
  const std::optional<double> stop_t = out.status == TrialStatus::Faulted ? std::optional(act) : abort_t;
  try {
    out.lifetime = tracker.finish(out.hard_failure_t, stop_t);
  } catch (const InsufficientDataError&) {
    out.lifetime = {std::min(act, cap), false, 0.0, analysis::TerminalCause::Aborted};
    out.partial = true;
  }
  if (!out.amplitudes.empty()) {
    const double until = proto.average_window == AverageWindow::Lifetime ? out.lifetime.lifetime : act;
    try {
      out.avg_displacement = analysis::average_displacement(out.amplitudes, until);
    } catch (const InsufficientDataError&) {
      out.avg_displacement = 0.0;
    }
  }
  if (!out.pre_sweep.empty() && !out.post_sweep.empty()) {
    out.capacitance_degradation = analysis::capacitance_degradation(out.pre_sweep, out.post_sweep);
  }
  if (mode_ != ChannelMode::Faulted) log("trial-ended", std::string(to_string(out.status)));
  return out;
}

}  // namespace dealab::rig
