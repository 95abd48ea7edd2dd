#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "dealab/devicemodel.hpp"
#include "dealab/errors.hpp"

using namespace dealab;
using namespace dealab::device;

namespace {

const Calibration kCal = Calibration::defaults();

// Lifetime of one simulated device, stepping one drive period at a time:
// the earlier of breakdown and the 80 % amplitude crossing, else the cap.
struct SimLife {
  double t;
  bool censored;
};

SimLife simulate_life(const MaterialConfig& m, double field, double freq, std::uint64_t seed, double cap = 10800.0) {
  DeviceSpec spec = DeviceSpec::test_sample(m);
  DeviceState st = fresh_state(kCal, seed);
  const double dt = std::max(1.0 / freq, 0.5);
  const double a0 = displacement(kCal, spec, st, field);
  double t = 0.0;
  while (t < cap) {
    const double step = std::min(dt, cap - t);
    st = step_degradation(kCal, spec, st, {field, freq}, step);
    t += step;
    if (st.failed) return {st.failed_at_s, false};
    if (displacement(kCal, spec, st, field) < 0.8 * a0) return {t, false};
  }
  return {cap, true};
}

double mean_life(const MaterialConfig& m, double field, double freq, int n, int* censored = nullptr) {
  double sum = 0.0;
  int c = 0;
  for (int r = 0; r < n; ++r) {
    const SimLife l = simulate_life(m, field, freq, 1000 + r);
    sum += l.t;
    c += l.censored ? 1 : 0;
  }
  if (censored) *censored = c;
  return sum / n;
}

}  // namespace

TEST(DeviceModel, ZeroFieldGivesNoOutput) {
  for (const DeviceSpec& s : {DeviceSpec::test_sample(), DeviceSpec::scaled()}) {
    const DeviceState st = fresh_state(kCal, 1);
    EXPECT_EQ(displacement(kCal, s, st, 0.0), 0.0);
    EXPECT_EQ(blocked_force(kCal, s, st, 0.0), 0.0);
  }
}

TEST(DeviceModel, ScaledDeviceStrokeAtRatedField) {
  const double d = displacement(kCal, DeviceSpec::scaled(), fresh_state(kCal, 1), 42.0);
  EXPECT_NEAR(d, 2.0, 0.1);
}

TEST(DeviceModel, AmplitudeFactorScalesLinearly) {
  const DeviceSpec s = DeviceSpec::scaled();
  DeviceState st = fresh_state(kCal, 1);
  const double fresh = displacement(kCal, s, st, 42.0);
  st.amplitude_factor = 0.5;
  EXPECT_DOUBLE_EQ(displacement(kCal, s, st, 42.0), fresh * 0.5);
}

TEST(DeviceModel, BlockedForceSpecificValueAndReinforcement) {
  DeviceSpec s = DeviceSpec::scaled();
  s.mass_g = 28.0 / 12.0;
  const DeviceState st = fresh_state(kCal, 1);
  const double oracle = 0.55 * 28.0 / 12.0;
  const double f = blocked_force(kCal, s, st, kCal.rated_field);
  EXPECT_NEAR(f, oracle, 0.05 * oracle);
  s.reinforced = false;
  EXPECT_DOUBLE_EQ(blocked_force(kCal, s, st, kCal.rated_field), f / 2.0);
}

TEST(DeviceModel, OutputsMonotoneInField) {
  const DeviceSpec s = DeviceSpec::test_sample();
  const DeviceState st = fresh_state(kCal, 3);
  double prev_d = 0.0, prev_f = 0.0;
  for (double e = 0.0; e <= 80.0; e += 0.25) {
    const double d = displacement(kCal, s, st, e);
    const double f = blocked_force(kCal, s, st, e);
    EXPECT_GE(d, prev_d);
    EXPECT_GE(f, prev_f);
    prev_d = d;
    prev_f = f;
  }
}

TEST(DeviceModel, FailureIsAbsorbing) {
  const DeviceSpec s = DeviceSpec::test_sample();
  DeviceState st = fresh_state(kCal, 11);
  while (!st.failed) st = step_degradation(kCal, s, st, {55.0, 1.0}, 10.0);
  EXPECT_EQ(displacement(kCal, s, st, 40.0), 0.0);
  const DeviceState next = step_degradation(kCal, s, st, {50.0, 10.0}, 7.0);
  EXPECT_TRUE(next.failed);
  EXPECT_DOUBLE_EQ(next.age_s, st.age_s + 7.0);
  DeviceState expect = st;
  expect.age_s = next.age_s;
  EXPECT_EQ(next, expect);
}

TEST(DeviceModel, AmplitudeNeverIncreases) {
  const DeviceSpec s = DeviceSpec::test_sample();
  DeviceState st = fresh_state(kCal, 5);
  double prev = st.amplitude_factor;
  for (int i = 0; i < 2000 && !st.failed; ++i) {
    const Drive d{(i % 7) * 8.0, 1.0 + (i % 5) * 10.0};
    st = step_degradation(kCal, s, st, d, 3.0);
    EXPECT_LE(st.amplitude_factor, prev);
    prev = st.amplitude_factor;
  }
}

TEST(DeviceModel, TrajectoriesAreBitIdentical) {
  const DeviceSpec s = DeviceSpec::test_sample({Filler::LM, 3.3});
  DeviceState a = fresh_state(kCal, 42), b = fresh_state(kCal, 42);
  for (int i = 0; i < 500; ++i) {
    a = step_degradation(kCal, s, a, {47.0, 5.0}, 1.3);
    b = step_degradation(kCal, s, b, {47.0, 5.0}, 1.3);
    ASSERT_EQ(a, b);
  }
  EXPECT_NE(fresh_state(kCal, 42).failure_wear, fresh_state(kCal, 43).failure_wear);
  EXPECT_EQ(fresh_state(kCal, 1, 99).failure_wear, fresh_state(kCal, 2, 99).failure_wear);
}

TEST(DeviceModel, CapacitanceAgesAndRollsOff) {
  const DeviceSpec s = DeviceSpec::test_sample();
  const DeviceState fresh = fresh_state(kCal, 9);
  DeviceState aged = fresh;
  for (int i = 0; i < 60; ++i) aged = step_degradation(kCal, s, aged, {50.0, 1.0}, 10.0);
  for (double p : {1e3, 1e4, 1e5, 1e6}) {
    EXPECT_LT(capacitance(kCal, s, aged, p), capacitance(kCal, s, fresh, p));
  }
  for (const DeviceState& st : {fresh, aged}) {
    EXPECT_GE(capacitance(kCal, s, st, 1e3), capacitance(kCal, s, st, 1e6));
  }
  EXPECT_THROW((void)capacitance(kCal, s, fresh, 999.0), RangeError);
  EXPECT_THROW((void)capacitance(kCal, s, fresh, 1.01e6), RangeError);
}

TEST(DeviceModel, BaselineCapacitanceParallelPlate) {
  DeviceSpec s = DeviceSpec::test_sample();
  // 8.854e-12 F/m * 2.8 * (10 mm * 40 mm) * 10 layers / 30 um = 3.3054 nF
  const double hand = 8.8541878128e-12 * 2.8 * (0.010 * 0.040) * 10 / 30e-6 * 1e9;
  EXPECT_NEAR(baseline_capacitance_nf(kCal, s), hand, 1e-9 * hand);
  const double c10 = baseline_capacitance_nf(kCal, s);
  s.active_layers = 20;
  EXPECT_NEAR(baseline_capacitance_nf(kCal, s), 2.0 * c10, 1e-12 * c10);
}

TEST(DeviceModel, LowFieldSurvivesCap) {
  int censored = 0;
  (void)mean_life(MaterialConfig{}, 35.0, 1.0, 100, &censored);
  EXPECT_GE(censored, 95);
}

TEST(DeviceModel, HighFieldMeanLifeBelowFloor) {
  EXPECT_LT(mean_life(MaterialConfig{}, 50.0, 1.0, 100), 1500.0);
}

TEST(DeviceModel, MeanLifeDecreasesWithField) {
  for (double f : {1.0, 50.0}) {
    double prev = std::numeric_limits<double>::infinity();
    for (double e : {35.0, 40.0, 45.0, 50.0}) {
      const double m = mean_life(MaterialConfig{}, e, f, 30);
      EXPECT_LT(m, prev) << "field " << e << " freq " << f;
      prev = m;
    }
  }
}

TEST(DeviceModel, MaterialOrderingAtHighFrequency) {
  const double cg = mean_life({Filler::CG, 2.5}, 45.0, 50.0, 30);
  const double cb = mean_life({Filler::CB, 2.5}, 45.0, 50.0, 30);
  const double lm = mean_life({Filler::LM, 2.5}, 45.0, 50.0, 30);
  EXPECT_GT(cg, cb);
  EXPECT_GT(cb, lm);
}

TEST(DeviceModel, ZeroFieldNeverWears) {
  EXPECT_TRUE(std::isinf(characteristic_life(kCal, MaterialConfig{}, {0.0, 1.0})));
  DeviceState st = fresh_state(kCal, 2);
  st = step_degradation(kCal, DeviceSpec::test_sample(), st, {0.0, 1.0}, 1e6);
  EXPECT_FALSE(st.failed);
  EXPECT_EQ(st.amplitude_factor, 1.0);
}

TEST(DeviceModel, CalibrationConfigRoundTrip) {
  Calibration c = Calibration::defaults();
  c.eta_ref_s = 1234.5;
  c.filler_gain_cg = 1.07;
  const Calibration back = Calibration::from_config(c.to_config());
  EXPECT_EQ(back.eta_ref_s, 1234.5);
  EXPECT_EQ(back.filler_gain_cg, 1.07);
  EXPECT_EQ(back.field_exponent, c.field_exponent);
  EXPECT_EQ(back.to_config().values(), c.to_config().values());
}

TEST(DeviceModel, ShippedCalibrationMatchesDefaults) {
  const Calibration file = Calibration::from_config(KeyValueConfig::load(DEALAB_SOURCE_DIR "/config/calibration.conf"));
  EXPECT_EQ(file.to_config().values(), Calibration::defaults().to_config().values());
}

TEST(DeviceModel, RejectsInvalidInputs) {
  EXPECT_THROW((MaterialConfig{Filler::CB, 0.5}.validate()), ValidationError);
  EXPECT_THROW((Drive{-1.0, 1.0}.validate()), ValidationError);
  EXPECT_THROW((Drive{40.0, 0.0}.validate()), ValidationError);
  DeviceSpec s;
  s.active_layers = 0;
  EXPECT_THROW(s.validate(), ValidationError);
  EXPECT_EQ(parse_filler("CG"), Filler::CG);
}
