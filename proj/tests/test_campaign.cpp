#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "dealab/campaign.hpp"
#include "dealab/errors.hpp"

using namespace dealab;
using namespace dealab::campaign;
using device::Filler;
using device::MaterialConfig;

namespace {

TrialRecord record(int stage, Cell cell, int rep, double life, double disp, bool censored = false,
                   rig::TrialStatus status = rig::TrialStatus::Complete) {
  TrialRecord r;
  r.stage = stage;
  r.cell = cell;
  r.replicate = rep;
  r.device_id = make_device_id(stage, cell, rep);
  r.status = status;
  r.lifetime.lifetime = life;
  r.lifetime.censored = censored;
  r.lifetime.cause = censored ? analysis::TerminalCause::Cap : analysis::TerminalCause::ThresholdCrossed;
  r.avg_displacement = disp;
  return r;
}

CellSummary summary(OperatingPoint p, double life, double disp, int completed = 3, bool stable = false) {
  CellSummary s;
  s.cell = {p, kBaseline};
  s.trials = completed;
  s.completed = completed;
  s.stable = stable;
  s.lifetime_mean = life;
  s.displacement_mean = disp;
  return s;
}

CellSummary material_summary(OperatingPoint p, MaterialConfig m, double life, double disp) {
  CellSummary s = summary(p, life, disp);
  s.stage = 2;
  s.cell.material = m;
  return s;
}

// Stage-1 landscape shaped like the paper's: life falls with field, displacement rises.
std::vector<CellSummary> paper_landscape() {
  std::vector<CellSummary> out;
  const double life[4][4] = {{10800, 10800, 10800, 10800},
                             {5200, 4300, 3600, 2500},
                             {2300, 1900, 1700, 1600},
                             {400, 380, 350, 330}};
  const double fields[4] = {35, 40, 45, 50};
  const double freqs[4] = {1, 5, 10, 50};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const double disp = 0.1 * fields[i] * (1.0 - 0.01 * j);
      out.push_back(summary({fields[i], freqs[j]}, life[i][j], disp, 3, i == 0));
    }
  }
  // at 1 Hz the 45 V/um cell misses the floor
  out[8].lifetime_mean = 1400;
  return out;
}

}  // namespace

TEST(Campaign, Stage1PaperGridFirstWave) {
  const ParamSpace space;
  const auto plan = plan_stage1(space);
  EXPECT_EQ(plan.size(), 48u);
  std::set<std::string> ids;
  for (const auto& t : plan) {
    EXPECT_EQ(t.stage, 1);
    EXPECT_EQ(t.cell.material, kBaseline);
    EXPECT_LT(t.replicate, 3);
    ids.insert(t.device_id);
  }
  EXPECT_EQ(ids.size(), plan.size());
  EXPECT_EQ(plan_stage1(space), plan);
}

TEST(Campaign, Stage1EarlyStop) {
  ParamSpace space;
  space.fields = {35, 50};
  space.frequencies = {1};
  std::vector<TrialRecord> done;
  for (int k = 0; k < 3; ++k) {
    done.push_back(record(1, {{35, 1}, kBaseline}, k, 10800, 0.1, true));
    done.push_back(record(1, {{50, 1}, kBaseline}, k, 500, 0.5));
  }
  const auto next = plan_stage1(space, done);
  ASSERT_EQ(next.size(), 2u);
  for (const auto& t : next) {
    EXPECT_EQ(t.cell.point.field, 50);
    EXPECT_GE(t.replicate, 3);
  }
  const auto all = summarize(done, 1);
  ASSERT_EQ(all.size(), 2u);
  EXPECT_TRUE(all[0].stable);
  EXPECT_FALSE(all[1].stable);

  // total count never exceeds replicates, and stable cells stop at 3
  std::size_t total = done.size() + next.size();
  EXPECT_LE(total, 2u * 5u);
}

TEST(Campaign, Stage1SingleCell) {
  ParamSpace space;
  space.fields = {40};
  space.frequencies = {5};
  space.replicates_per_cell = 4;
  auto first = plan_stage1(space);
  ASSERT_EQ(first.size(), 3u);
  std::vector<TrialRecord> done;
  for (const auto& t : first) done.push_back(record(1, t.cell, t.replicate, 2000, 0.4));
  auto rest = plan_stage1(space, done);
  ASSERT_EQ(rest.size(), 1u);
  done.push_back(record(1, rest[0].cell, rest[0].replicate, 2100, 0.4));
  EXPECT_TRUE(plan_stage1(space, done).empty());

  space.replicates_per_cell = 2;
  EXPECT_EQ(plan_stage1(space).size(), 2u);
}

TEST(Campaign, BoundaryOnPaperShapedLandscape) {
  const auto b = select_boundary(paper_landscape(), ParamSpace{});
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0], (OperatingPoint{40, 1}));
  EXPECT_EQ(b[1], (OperatingPoint{45, 50}));
}

TEST(Campaign, BoundaryAllCensoredFails) {
  auto cells = paper_landscape();
  for (auto& c : cells) c.lifetime_mean = 10800;
  try {
    (void)select_boundary(cells, ParamSpace{});
    FAIL();
  } catch (const SelectionError& e) {
    EXPECT_NE(std::string(e.what()).find("1 Hz"), std::string::npos);
  }
}

TEST(Campaign, BoundaryNeedsReplicates) {
  auto cells = paper_landscape();
  cells[5].completed = 2;
  EXPECT_THROW((void)select_boundary(cells, ParamSpace{}), SelectionError);
}

TEST(Campaign, BoundaryMatchesBruteForce) {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> life(0.0, 14000.0), disp(0.0, 3.0);
  std::bernoulli_distribution coin(0.15);
  const ParamSpace space;
  int checked = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<CellSummary> cells;
    for (double e : space.fields) {
      for (double f : space.frequencies) {
        // coarse displacement values make ties common
        cells.push_back(summary({e, f}, std::min(10800.0, life(gen)), std::round(disp(gen) * 2) / 2, 3, coin(gen)));
      }
    }
    std::vector<OperatingPoint> oracle;
    bool ok = true;
    for (double f : {1.0, 50.0}) {
      std::vector<CellSummary> cand;
      for (const auto& c : cells) {
        if (c.cell.point.freq == f && !c.stable && c.lifetime_mean < 10800 && c.lifetime_mean >= 1500) cand.push_back(c);
      }
      if (cand.empty()) {
        ok = false;
        break;
      }
      double best = -1;
      for (const auto& c : cand) best = std::max(best, c.displacement_mean);
      double field = 1e9;
      for (const auto& c : cand) {
        if (c.displacement_mean == best) field = std::min(field, c.cell.point.field);
      }
      oracle.push_back({field, f});
    }
    if (!ok) {
      EXPECT_THROW((void)select_boundary(cells, space), SelectionError);
      continue;
    }
    EXPECT_EQ(select_boundary(cells, space), oracle);
    ++checked;
  }
  EXPECT_GT(checked, 500);
}

TEST(Campaign, Stage2PaperCounts) {
  const ParamSpace space;
  const std::vector<OperatingPoint> boundary{{40, 1}, {45, 50}};
  const auto plan = plan_stage2(boundary, space);
  std::set<std::pair<OperatingPoint, MaterialConfig>> cells;
  for (const auto& t : plan) cells.insert({t.cell.point, t.cell.material});
  // three fillers plus five concentrations, sharing the baseline
  EXPECT_EQ(cells.size(), 2u * 7u);
  EXPECT_EQ(plan.size(), 2u * 7u * 5u);
  for (const auto& [p, m] : cells) {
    const int diff = (m.filler != kBaseline.filler) + (m.cnt_conc != kBaseline.cnt_conc);
    EXPECT_LE(diff, 1);
  }
}

TEST(Campaign, Stage2DeduplicatesBaseline) {
  ParamSpace space;
  space.fillers = {Filler::CB};
  space.cnt_concs = {2.5};
  space.replicates_per_cell = 1;
  EXPECT_EQ(plan_stage2({{40, 1}}, space).size(), 1u);
  space.fillers = {Filler::CG};
  space.cnt_concs = {2.9};
  const auto plan = plan_stage2({{40, 1}}, space);
  ASSERT_EQ(plan.size(), 3u);
  EXPECT_EQ(std::count_if(plan.begin(), plan.end(), [](auto& t) { return t.cell.material == kBaseline; }), 1);
  EXPECT_THROW((void)plan_stage2({}, space), ValidationError);
}

TEST(Campaign, PaperShapedMaterialSelection) {
  const OperatingPoint p{45, 50};
  std::vector<CellSummary> s2{
      material_summary(p, {Filler::LM, 2.5}, 300, 0.50), material_summary(p, {Filler::CB, 2.5}, 900, 0.52),
      material_summary(p, {Filler::CG, 2.5}, 1700, 0.53), material_summary(p, {Filler::CB, 1.8}, 700, 0.40),
      material_summary(p, {Filler::CB, 2.9}, 1100, 0.60), material_summary(p, {Filler::CB, 3.3}, 800, 0.45),
  };
  const auto sel = select_best_material(s2, {p});
  ASSERT_EQ(sel.size(), 1u);
  EXPECT_EQ(sel[0].lifetime_best, (MaterialConfig{Filler::CG, 2.5}));
  EXPECT_EQ(sel[0].displacement_best, (MaterialConfig{Filler::CB, 2.9}));
  ASSERT_TRUE(sel[0].stage3.has_value());
  EXPECT_EQ(*sel[0].stage3, (MaterialConfig{Filler::CG, 2.9}));
  const auto s3 = plan_stage3(sel, ParamSpace{});
  EXPECT_EQ(s3.size(), 5u);
  EXPECT_EQ(s3[0].stage, 3);

  s2[2].displacement_mean = 0.7;  // CG/2.5 wins both
  const auto one = select_best_material(s2, {p});
  EXPECT_FALSE(one[0].stage3.has_value());
  EXPECT_TRUE(plan_stage3(one, ParamSpace{}).empty());
}

TEST(Campaign, MaterialSelectionMatchesArgmax) {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const ParamSpace space;
  const OperatingPoint p{40, 1};
  std::vector<MaterialConfig> mats;
  for (auto f : space.fillers) mats.push_back({f, 2.5});
  for (double c : space.cnt_concs) {
    if (c != 2.5) mats.push_back({Filler::CB, c});
  }
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<CellSummary> s2;
    for (const auto& m : mats) s2.push_back(material_summary(p, m, 1000 + 3000 * u(gen), u(gen)));
    std::size_t lb = 0, db = 0;
    for (std::size_t i = 0; i < s2.size(); ++i) {
      if (s2[i].lifetime_mean > s2[lb].lifetime_mean) lb = i;
      if (s2[i].displacement_mean > s2[db].displacement_mean) db = i;
    }
    const auto sel = select_best_material(s2, {p});
    EXPECT_EQ(sel[0].lifetime_best, s2[lb].cell.material);
    EXPECT_EQ(sel[0].displacement_best, s2[db].cell.material);
    const MaterialConfig a = s2[lb].cell.material, b = s2[db].cell.material;
    const bool one_each = (a.filler != kBaseline.filler && b.cnt_conc != kBaseline.cnt_conc) ||
                          (b.filler != kBaseline.filler && a.cnt_conc != kBaseline.cnt_conc);
    if (one_each && a != b) {
      ASSERT_TRUE(sel[0].stage3.has_value());
      const MaterialConfig combo = sel[0].stage3.value();
      EXPECT_NE(combo.filler, kBaseline.filler);
      EXPECT_NE(combo.cnt_conc, kBaseline.cnt_conc);
    } else {
      EXPECT_FALSE(sel[0].stage3.has_value());
    }
  }
}

TEST(Campaign, PercentChange) {
  EXPECT_NEAR(percent_change(1.22 * 1000.0, 1000.0), 22.0, 1e-9);
  EXPECT_EQ(percent_change(500.0, 500.0), 0.0);
  EXPECT_THROW((void)percent_change(1.0, 0.0), ValidationError);
}

TEST(Campaign, ReportRecomputesFromRecords) {
  const OperatingPoint p{40, 1};
  std::vector<TrialRecord> recs;
  const auto add = [&](int stage, MaterialConfig m, std::vector<double> lives, double disp) {
    for (std::size_t k = 0; k < lives.size(); ++k) {
      recs.push_back(record(stage, {p, m}, static_cast<int>(k), lives[k], disp + 0.01 * k));
    }
  };
  add(1, kBaseline, {3000, 3100, 3200}, 0.3);
  add(2, kBaseline, {3000, 3200, 3400}, 0.30);
  add(2, {Filler::CG, 2.5}, {3700, 3900, 3800}, 0.31);
  add(2, {Filler::CB, 1.8}, {1900, 1700, 1800}, 0.25);
  add(2, {Filler::CB, 2.9}, {3300, 3300, 3300}, 0.35);
  add(3, {Filler::CG, 2.9}, {3600, 3650, 3700}, 0.36);
  recs.push_back(record(2, {p, {Filler::LM, 2.5}}, 0, 100, 0.1, false, rig::TrialStatus::Faulted));

  const auto sel = select_best_material(summarize(recs, 2), {p});
  const CampaignReport rep = compile_report(recs, {p}, sel);
  ASSERT_EQ(rep.comparisons.size(), 1u);
  const auto& c = rep.comparisons[0];
  EXPECT_EQ(c.best.material, (MaterialConfig{Filler::CG, 2.5}));
  EXPECT_EQ(c.worst.material, (MaterialConfig{Filler::CB, 1.8}));
  EXPECT_EQ(c.baseline.material, kBaseline);
  EXPECT_NEAR(c.lifetime_gain_vs_baseline_pct, (3800.0 - 3200.0) / 3200.0 * 100.0, 1e-9);
  EXPECT_NEAR(c.lifetime_gain_vs_worst_pct, (3800.0 - 1800.0) / 1800.0 * 100.0, 1e-9);
  EXPECT_NEAR(c.displacement_delta_vs_baseline_pct, (0.32 - 0.31) / 0.31 * 100.0, 1e-9);
  EXPECT_EQ(rep.trials, recs.size());

  for (const auto& s : rep.cells) {
    if (s.stage == 2 && s.cell.material == kBaseline) {
      EXPECT_NEAR(s.lifetime_std, 200.0, 1e-9);
      EXPECT_EQ(s.completed, 3);
    }
    if (s.cell.material.filler == Filler::LM) {
      EXPECT_EQ(s.trials, 1);
      EXPECT_EQ(s.completed, 0);
    }
  }
}

TEST(Campaign, DeviceIdsAreReadable) {
  EXPECT_EQ(make_device_id(1, {{40, 1}, kBaseline}, 0), "s1-E40-f1-CB-2.5-r0");
  EXPECT_EQ(make_device_id(3, {{45, 50}, {Filler::CG, 2.9}}, 4), "s3-E45-f50-CG-2.9-r4");
}
