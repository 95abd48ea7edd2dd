#include "dealab/waveform.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dealab/errors.hpp"

namespace dealab::waveform {

namespace {

void check_time(const WaveformSpec& spec, double t) {
  if (!(t >= 0.0 && t <= spec.duration)) {
    throw RangeError("waveform time " + std::to_string(t) + " s outside [0, " + std::to_string(spec.duration) + "]");
  }
}

double cycle_fraction(double ph) { return ph - std::floor(ph); }

}  // namespace

void WaveformSpec::validate() const {
  if (!(duty > 0.0 && duty < 1.0)) throw ValidationError("duty must lie in (0, 1)");
  if (!(freq_start > 0.0 && freq_end > 0.0)) throw ValidationError("waveform frequencies must be > 0");
  if (!(duration > 0.0)) throw ValidationError("waveform duration must be > 0");
  if (!(field >= 0.0)) throw ValidationError("waveform field must be >= 0");
  if (!(dead_time >= 0.0)) throw ValidationError("dead time must be >= 0");
  if (kind == Kind::DCSquare && freq_start != freq_end) {
    throw ValidationError("DCSquare requires freq_end == freq_start");
  }
}

WaveformSpec WaveformSpec::dc_square(double field, double frequency, double duration, double duty) {
  WaveformSpec s;
  s.kind = Kind::DCSquare;
  s.field = field;
  s.freq_start = s.freq_end = frequency;
  s.duty = duty;
  s.duration = duration;
  s.validate();
  return s;
}

WaveformSpec WaveformSpec::sweep(double field, double f_start, double f_end, double duration, SweepLaw law) {
  WaveformSpec s;
  s.kind = Kind::FrequencySweep;
  s.field = field;
  s.freq_start = f_start;
  s.freq_end = f_end;
  s.duration = duration;
  s.law = law;
  s.validate();
  return s;
}

double instantaneous_frequency(const WaveformSpec& spec, double t) {
  if (spec.kind == Kind::DCSquare || spec.freq_start == spec.freq_end) return spec.freq_start;
  const double x = t / spec.duration;
  if (spec.law == SweepLaw::Linear) return spec.freq_start + (spec.freq_end - spec.freq_start) * x;
  return spec.freq_start * std::pow(spec.freq_end / spec.freq_start, x);
}

double phase(const WaveformSpec& spec, double t) {
  if (spec.kind == Kind::DCSquare || spec.freq_start == spec.freq_end) return spec.freq_start * t;
  const double f0 = spec.freq_start;
  const double f1 = spec.freq_end;
  const double T = spec.duration;
  if (spec.law == SweepLaw::Linear) return f0 * t + (f1 - f0) * t * t / (2.0 * T);
  const double k = std::log(f1 / f0);
  return f0 * T / k * std::expm1(k * t / T);
}

bool is_high(const WaveformSpec& spec, double t) { return cycle_fraction(phase(spec, t)) < spec.duty; }

double voltage_at(const WaveformSpec& spec, double t, double layer_thickness_um) {
  check_time(spec, t);
  return is_high(spec, t) ? spec.field * layer_thickness_um : 0.0;
}

SwitchState switch_schedule(const WaveformSpec& spec, double t) {
  check_time(spec, t);
  const double frac = cycle_fraction(phase(spec, t));
  const double to_edge = std::min({frac, std::abs(frac - spec.duty), 1.0 - frac});
  if (to_edge / instantaneous_frequency(spec, t) < 0.5 * spec.dead_time) return {false, false};
  const bool high = frac < spec.duty;
  return {high, !high};
}

}  // namespace dealab::waveform
