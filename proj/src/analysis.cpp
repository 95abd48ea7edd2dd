#include "dealab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dealab/errors.hpp"

namespace dealab::analysis {

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Theil-Sen line through the points, evaluated at the first abscissa.
double theil_sen_start(std::span<const CycleAmplitude> pts) {
  if (pts.size() < 2) return pts.empty() ? 0.0 : pts.front().amplitude;
  std::vector<double> slopes;
  slopes.reserve(pts.size() * (pts.size() - 1) / 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      slopes.push_back((pts[j].amplitude - pts[i].amplitude) / (pts[j].t - pts[i].t));
    }
  }
  const double slope = median_of(std::move(slopes));
  std::vector<double> intercepts;
  intercepts.reserve(pts.size());
  for (const auto& p : pts) intercepts.push_back(p.amplitude - slope * p.t);
  return median_of(std::move(intercepts)) + slope * pts.front().t;
}

double estimate_initial(std::span<const CycleAmplitude> pts, InitialEstimator e) {
  if (e == InitialEstimator::TheilSen) return theil_sen_start(pts);
  std::vector<double> v;
  v.reserve(pts.size());
  for (const auto& p : pts) v.push_back(p.amplitude);
  return v.empty() ? 0.0 : median_of(std::move(v));
}

}  // namespace

CycleAmplitudeReducer::CycleAmplitudeReducer(double drive_freq, double drive_start)
    : freq_(drive_freq), start_(drive_start) {
  if (!(drive_freq > 0.0)) throw SamplingError("drive frequency must be > 0");
}

std::optional<CycleAmplitude> CycleAmplitudeReducer::push(double t, double displacement) {
  if (t < start_) return std::nullopt;
  const auto period = static_cast<long long>(std::floor((t - start_) * freq_));
  std::optional<CycleAmplitude> done;
  if (period != period_) {
    if (period_ >= 0) {
      done = CycleAmplitude{start_ + (static_cast<double>(period_) + 0.5) / freq_, hi_ - lo_};
    }
    period_ = period;
    lo_ = hi_ = displacement;
  } else {
    lo_ = std::min(lo_, displacement);
    hi_ = std::max(hi_, displacement);
  }
  return done;
}

std::vector<CycleAmplitude> cycle_amplitudes(const DisplacementTrace& trace) {
  const auto& s = trace.samples;
  if (s.size() < 2) throw SamplingError("trace needs at least two samples");
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (!(s[i].t > s[i - 1].t)) throw SamplingError("trace timestamps must be strictly increasing");
  }
  const double span = s.back().t - s.front().t;
  const double period = 1.0 / trace.drive_freq;
  if (span < 2.0 * period * (1.0 - 1e-9)) throw SamplingError("trace spans fewer than two drive periods");
  const double rate = static_cast<double>(s.size() - 1) / span;
  if (rate < 4.0 * trace.drive_freq * (1.0 - 1e-9)) {
    throw SamplingError("sample rate " + std::to_string(rate) + " Hz is below 4x the drive frequency");
  }

  CycleAmplitudeReducer reducer(trace.drive_freq, trace.drive_start);
  std::vector<CycleAmplitude> out;
  for (const auto& x : s) {
    if (auto c = reducer.push(x.t, x.displacement)) out.push_back(*c);
  }
  return out;
}

std::string_view to_string(TerminalCause c) {
  switch (c) {
    case TerminalCause::ThresholdCrossed: return "ThresholdCrossed";
    case TerminalCause::HardFailure: return "HardFailure";
    case TerminalCause::Cap: return "Cap";
    case TerminalCause::Aborted: return "Aborted";
  }
  return "?";
}

TerminalCause parse_terminal_cause(std::string_view s) {
  if (s == "ThresholdCrossed") return TerminalCause::ThresholdCrossed;
  if (s == "HardFailure") return TerminalCause::HardFailure;
  if (s == "Cap") return TerminalCause::Cap;
  if (s == "Aborted") return TerminalCause::Aborted;
  throw ValidationError("unknown terminal cause '" + std::string(s) + "'");
}

void LifetimeParams::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("lifetime threshold must lie in (0, 1)");
  if (!(cap > 0.0)) throw ValidationError("lifetime cap must be > 0");
  if (init_window < 1 || median_window < 1 || persistence < 1) {
    throw ValidationError("init_window, median_window and persistence must be >= 1");
  }
}

LifetimeTracker::LifetimeTracker(LifetimeParams params) : params_(params) { params_.validate(); }

void LifetimeTracker::push(std::span<const CycleAmplitude> cs) {
  for (const auto& c : cs) push(c);
}

void LifetimeTracker::push(const CycleAmplitude& c) {
  amps_.push_back(c);
  const auto init = static_cast<std::size_t>(params_.init_window);
  if (!initial_ && amps_.size() == init) {
    initial_ = estimate_initial(std::span(amps_).first(init), params_.estimator);
  }
  if (!initial_) return;
  const auto half = static_cast<std::size_t>(params_.median_window / 2);
  while (!crossing_ && next_eval_ + half < amps_.size()) evaluate(next_eval_++);
}

double LifetimeTracker::smoothed(std::size_t i) const {
  const auto half = static_cast<std::size_t>(params_.median_window / 2);
  const std::size_t lo = i >= half ? i - half : 0;
  const std::size_t hi = std::min(amps_.size() - 1, i + half);
  std::vector<double> w;
  w.reserve(hi - lo + 1);
  for (std::size_t k = lo; k <= hi; ++k) w.push_back(amps_[k].amplitude);
  return median_of(std::move(w));
}

void LifetimeTracker::evaluate(std::size_t i) {
  const double level = params_.threshold * *initial_;
  const double m = smoothed(i);
  if (m < level) {
    if (run_length_ == 0) run_start_ = i;
    ++run_length_;
    if (run_length_ >= static_cast<std::size_t>(params_.persistence)) {
      const std::size_t s = run_start_;
      if (s == 0) {
        crossing_ = amps_[0].t;
      } else {
        // the cycle before the run is at or above the level: interpolate the crossing
        const double m0 = s == i ? prev_smoothed_ : smoothed(s - 1);
        const double m1 = smoothed(s);
        const double frac = (m0 - level) / (m0 - m1);
        crossing_ = amps_[s - 1].t + frac * (amps_[s].t - amps_[s - 1].t);
      }
    }
  } else {
    run_length_ = 0;
  }
  prev_smoothed_ = m;
}

LifetimeResult LifetimeTracker::finish(std::optional<double> hard_failure_t, std::optional<double> abort_t) const {
  LifetimeTracker tail = *this;
  if (tail.initial_) {
    while (!tail.crossing_ && tail.next_eval_ < tail.amps_.size()) tail.evaluate(tail.next_eval_++);
  } else if (!hard_failure_t && !abort_t) {
    throw InsufficientDataError("need " + std::to_string(params_.init_window) + " cycles, have " +
                                std::to_string(amps_.size()));
  }

  LifetimeResult r;
  r.initial_amplitude = tail.initial_ ? *tail.initial_ : estimate_initial(amps_, params_.estimator);
  r.lifetime = params_.cap;
  r.cause = TerminalCause::Cap;
  const auto consider = [&](std::optional<double> t, TerminalCause cause) {
    if (t && *t < r.lifetime) {
      r.lifetime = std::max(*t, 0.0);
      r.cause = cause;
    }
  };
  consider(tail.crossing_, TerminalCause::ThresholdCrossed);
  consider(hard_failure_t, TerminalCause::HardFailure);
  consider(abort_t, TerminalCause::Aborted);
  r.censored = r.cause == TerminalCause::Cap;
  return r;
}

LifetimeResult lifetime(std::span<const CycleAmplitude> amplitudes, const LifetimeParams& params,
                        std::optional<double> hard_failure_t, std::optional<double> abort_t) {
  LifetimeTracker tracker(params);
  tracker.push(amplitudes);
  return tracker.finish(hard_failure_t, abort_t);
}

double average_displacement(std::span<const CycleAmplitude> amplitudes, double until) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : amplitudes) {
    if (c.t > until) break;
    sum += c.amplitude;
    ++n;
  }
  if (n == 0) throw InsufficientDataError("no cycles inside the averaging window");
  return sum / static_cast<double>(n);
}

double capacitance_degradation(std::span<const SweepPoint> pre, std::span<const SweepPoint> post) {
  if (pre.size() != post.size() || pre.size() < 2) {
    throw ValidationError("sweeps must share the same (>= 2) probe frequencies");
  }
  for (std::size_t i = 0; i < pre.size(); ++i) {
    if (std::abs(pre[i].freq - post[i].freq) > 1e-9 * pre[i].freq) {
      throw ValidationError("sweeps must share the same probe frequencies");
    }
  }
  const double ref = kCapacitanceReferenceHz;
  for (std::size_t i = 1; i < pre.size(); ++i) {
    const double f0 = pre[i - 1].freq;
    const double f1 = pre[i].freq;
    if (ref >= std::min(f0, f1) && ref <= std::max(f0, f1)) {
      const double w = std::log(ref / f0) / std::log(f1 / f0);
      const double c_pre = pre[i - 1].capacitance_nf + w * (pre[i].capacitance_nf - pre[i - 1].capacitance_nf);
      const double c_post = post[i - 1].capacitance_nf + w * (post[i].capacitance_nf - post[i - 1].capacitance_nf);
      return 1.0 - c_post / c_pre;
    }
  }
  throw ValidationError("sweeps do not bracket the 10 kHz reference");
}

}  // namespace dealab::analysis
