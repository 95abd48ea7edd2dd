#include <gtest/gtest.h>

#include <cmath>

#include "dealab/errors.hpp"
#include "dealab/waveform.hpp"

using namespace dealab;
using namespace dealab::waveform;

TEST(Waveform, SquareLevels) {
  const auto w = WaveformSpec::dc_square(40.0, 1.0, 10.0);
  EXPECT_DOUBLE_EQ(voltage_at(w, 0.25, 30.0), 1200.0);
  EXPECT_DOUBLE_EQ(voltage_at(w, 0.75, 30.0), 0.0);
}

TEST(Waveform, OutOfRangeTime) {
  const auto w = WaveformSpec::dc_square(40.0, 1.0, 10.0);
  EXPECT_THROW((void)voltage_at(w, -1e-9, 30.0), RangeError);
  EXPECT_THROW((void)voltage_at(w, 10.001, 30.0), RangeError);
  EXPECT_THROW((void)switch_schedule(w, 11.0), RangeError);
  EXPECT_NO_THROW((void)voltage_at(w, 10.0, 30.0));
}

TEST(Waveform, InvalidSpecs) {
  EXPECT_THROW(WaveformSpec::dc_square(40.0, 1.0, 10.0, 1.0).validate(), ValidationError);
  EXPECT_THROW(WaveformSpec::dc_square(40.0, 0.0, 10.0).validate(), ValidationError);
  EXPECT_THROW(WaveformSpec::dc_square(40.0, 1.0, 0.0).validate(), ValidationError);
}

TEST(Waveform, SweepRisingEdgesCountedAt10kHz) {
  const auto w = WaveformSpec::sweep(40.0, 1.0, 100.0, 100.0);
  int edges = 0;
  bool prev = voltage_at(w, 0.0, 30.0) > 0.0;
  for (long i = 1; i <= 1000000; ++i) {
    const bool hi = voltage_at(w, i * 1e-4, 30.0) > 0.0;
    if (hi && !prev) ++edges;
    prev = hi;
  }
  // the t = 0 edge is not seen as a transition
  EXPECT_NEAR(edges + 1, 5050, 1);
}

TEST(Waveform, LogSweepPhase) {
  const auto w = WaveformSpec::sweep(40.0, 1.0, 100.0, 100.0, SweepLaw::Logarithmic);
  const double k = std::log(100.0);
  const double expected = 100.0 / k * (std::exp(k) - 1.0);
  EXPECT_NEAR(phase(w, 100.0), expected, 1e-6 * expected);
  EXPECT_NEAR(instantaneous_frequency(w, 50.0), 10.0, 1e-9);
}

TEST(Waveform, SwitchesExclusiveAtOneMegahertz) {
  for (double duty : {0.5, 0.2, 0.8}) {
    const auto w = WaveformSpec::dc_square(40.0, 10.0, 1.0, duty);
    int dead = 0;
    for (int i = 0; i <= 100000; ++i) {
      const double t = 0.3 + i * 1e-6;
      const SwitchState s = switch_schedule(w, t);
      ASSERT_FALSE(s.charge_closed && s.discharge_closed) << t;
      if (!s.charge_closed && !s.discharge_closed) ++dead;
    }
    // two edges per period, 100 us dead band each
    EXPECT_NEAR(dead, 200, 4);
  }
}

TEST(Waveform, SwitchFollowsSegment) {
  const auto w = WaveformSpec::dc_square(40.0, 1.0, 10.0);
  EXPECT_EQ(switch_schedule(w, 0.25), (SwitchState{true, false}));
  EXPECT_EQ(switch_schedule(w, 0.75), (SwitchState{false, true}));
  EXPECT_EQ(switch_schedule(w, 0.50002), (SwitchState{false, false}));
}

TEST(Waveform, PeriodicMean) {
  for (double duty : {0.5, 0.3}) {
    const auto w = WaveformSpec::dc_square(45.0, 5.0, 4.0, duty);
    const int n = 200000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += voltage_at(w, 1.0 + (i + 0.5) * 0.2 / n, 30.0);
    EXPECT_NEAR(sum / n, duty * 45.0 * 30.0, 1e-9 * 45.0 * 30.0);
    for (int i = 0; i < 1000; ++i) {
      const double t = i * 0.0037;
      EXPECT_EQ(voltage_at(w, t, 30.0), voltage_at(w, t + 0.2, 30.0)) << t;
    }
  }
}
