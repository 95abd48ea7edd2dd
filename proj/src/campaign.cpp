#include "dealab/campaign.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "dealab/errors.hpp"

namespace dealab::campaign {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string point_label(const OperatingPoint& p) { return num(p.field) + " V/um @ " + num(p.freq) + " Hz"; }

bool same_cell(const TrialRecord& r, const Cell& c, int stage) { return r.stage == stage && r.cell == c; }

}  // namespace

bool operator<(const Cell& a, const Cell& b) {
  if (a.point != b.point) return a.point < b.point;
  if (a.material.filler != b.material.filler) return a.material.filler < b.material.filler;
  return a.material.cnt_conc < b.material.cnt_conc;
}

std::string cell_label(const Cell& c) { return point_label(c.point) + " " + device::to_string(c.material); }

void ParamSpace::validate() const {
  if (fields.empty() || frequencies.empty() || fillers.empty() || cnt_concs.empty()) {
    throw ValidationError("parameter space lists must be non-empty");
  }
  if (replicates_per_cell < 1) throw ValidationError("replicates_per_cell must be >= 1");
  if (!(lifetime_cap > 0.0)) throw ValidationError("lifetime_cap must be > 0");
  for (double e : fields) {
    if (!(e >= 0.0)) throw ValidationError("fields must be >= 0");
  }
  for (double f : frequencies) {
    if (!(f > 0.0)) throw ValidationError("frequencies must be > 0");
  }
  for (double c : cnt_concs) device::MaterialConfig{device::Filler::CB, c}.validate();
}

std::string make_device_id(int stage, const Cell& cell, int replicate) {
  return "s" + std::to_string(stage) + "-E" + num(cell.point.field) + "-f" + num(cell.point.freq) + "-" +
         std::string(device::to_string(cell.material.filler)) + "-" + num(cell.material.cnt_conc) + "-r" +
         std::to_string(replicate);
}

bool is_stable(const std::vector<TrialRecord>& cell_records) {
  int censored = 0;
  for (const auto& r : cell_records) {
    if (r.replicate < kEarlyStopReplicates && r.status == rig::TrialStatus::Complete && r.lifetime.censored) ++censored;
  }
  return censored == kEarlyStopReplicates;
}

std::vector<CellSummary> summarize(const std::vector<TrialRecord>& records, int stage) {
  std::map<Cell, std::vector<const TrialRecord*>> by_cell;
  for (const auto& r : records) {
    if (r.stage == stage) by_cell[r.cell].push_back(&r);
  }
  std::vector<CellSummary> out;
  for (const auto& [cell, recs] : by_cell) {
    CellSummary s;
    s.stage = stage;
    s.cell = cell;
    s.trials = static_cast<int>(recs.size());
    std::vector<double> life;
    std::vector<double> disp;
    std::vector<TrialRecord> copies;
    for (const auto* r : recs) {
      copies.push_back(*r);
      if (r->status != rig::TrialStatus::Complete) continue;
      life.push_back(r->lifetime.lifetime);
      disp.push_back(r->avg_displacement);
      if (r->lifetime.censored) ++s.censored;
    }
    s.completed = static_cast<int>(life.size());
    s.stable = stage == 1 && is_stable(copies);
    const auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
      mean = 0.0;
      sd = 0.0;
      if (v.empty()) return;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      if (v.size() < 2) return;
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    };
    stats(life, s.lifetime_mean, s.lifetime_std);
    stats(disp, s.displacement_mean, s.displacement_std);
    out.push_back(s);
  }
  return out;
}

std::vector<PlannedTrial> plan_stage1(const ParamSpace& space, const std::vector<TrialRecord>& results) {
  space.validate();
  const int first = std::min(kEarlyStopReplicates, space.replicates_per_cell);
  std::vector<PlannedTrial> plan;
  for (double e : space.fields) {
    for (double f : space.frequencies) {
      const Cell cell{{e, f}, kBaseline};
      std::vector<TrialRecord> done;
      std::set<int> attempted;
      for (const auto& r : results) {
        if (same_cell(r, cell, 1)) {
          done.push_back(r);
          attempted.insert(r.replicate);
        }
      }
      int from = 0;
      int to = first;
      bool first_wave_done = true;
      for (int k = 0; k < first; ++k) first_wave_done = first_wave_done && attempted.count(k) > 0;
      if (first_wave_done) {
        if (is_stable(done)) continue;
        from = first;
        to = space.replicates_per_cell;
      }
      for (int k = from; k < to; ++k) {
        if (!attempted.count(k)) plan.push_back({1, cell, k, make_device_id(1, cell, k)});
      }
    }
  }
  return plan;
}

std::vector<OperatingPoint> select_boundary(const std::vector<CellSummary>& stage1, const ParamSpace& space,
                                            const BoundaryOptions& opts) {
  std::vector<double> freqs = opts.frequencies;
  if (freqs.empty()) {
    const auto [lo, hi] = std::minmax_element(space.frequencies.begin(), space.frequencies.end());
    freqs.push_back(*lo);
    if (*hi != *lo) freqs.push_back(*hi);
  }
  const int needed = std::min(kEarlyStopReplicates, space.replicates_per_cell);
  for (const auto& s : stage1) {
    if (!s.stable && s.completed < needed) {
      throw SelectionError("cell " + cell_label(s.cell) + " has " + std::to_string(s.completed) +
                           " completed replicates, need " + std::to_string(needed));
    }
  }

  std::vector<OperatingPoint> out;
  for (double f : freqs) {
    const CellSummary* pick = nullptr;
    for (const auto& s : stage1) {
      if (s.cell.point.freq != f || s.stable || s.completed == 0) continue;
      if (!(s.lifetime_mean < space.lifetime_cap) || s.lifetime_mean < opts.floor_s) continue;
      if (!pick || s.displacement_mean > pick->displacement_mean ||
          (s.displacement_mean == pick->displacement_mean && s.cell.point.field < pick->cell.point.field)) {
        pick = &s;
      }
    }
    if (!pick) throw SelectionError("no improvable cell at " + num(f) + " Hz");
    out.push_back(pick->cell.point);
  }
  return out;
}

std::vector<PlannedTrial> plan_stage2(const std::vector<OperatingPoint>& boundary, const ParamSpace& space) {
  space.validate();
  if (boundary.empty()) throw ValidationError("stage 2 needs at least one boundary condition");
  std::vector<PlannedTrial> plan;
  for (const auto& p : boundary) {
    std::vector<device::MaterialConfig> mats;
    const auto add = [&](device::MaterialConfig m) {
      if (std::find(mats.begin(), mats.end(), m) == mats.end()) mats.push_back(m);
    };
    for (auto filler : space.fillers) add({filler, kBaseline.cnt_conc});
    for (double c : space.cnt_concs) add({kBaseline.filler, c});
    add(kBaseline);
    for (const auto& m : mats) {
      const Cell cell{p, m};
      for (int k = 0; k < space.replicates_per_cell; ++k) plan.push_back({2, cell, k, make_device_id(2, cell, k)});
    }
  }
  return plan;
}

std::vector<MaterialSelection> select_best_material(const std::vector<CellSummary>& stage2,
                                                    const std::vector<OperatingPoint>& boundary) {
  std::vector<MaterialSelection> out;
  for (const auto& p : boundary) {
    std::vector<const CellSummary*> cells;
    for (const auto& s : stage2) {
      if (s.cell.point == p && s.completed > 0) cells.push_back(&s);
    }
    if (cells.empty()) throw SelectionError("no completed stage-2 cells at " + point_label(p));
    std::sort(cells.begin(), cells.end(), [](auto* a, auto* b) { return a->cell < b->cell; });
    const CellSummary* lb = cells.front();
    const CellSummary* db = cells.front();
    for (auto* s : cells) {
      if (s->lifetime_mean > lb->lifetime_mean) lb = s;
      if (s->displacement_mean > db->displacement_mean) db = s;
    }
    MaterialSelection sel{p, lb->cell.material, db->cell.material, std::nullopt};
    if (sel.lifetime_best != sel.displacement_best) {
      const auto& a = sel.lifetime_best;
      const auto& b = sel.displacement_best;
      const bool filler_conflict = a.filler != kBaseline.filler && b.filler != kBaseline.filler && a.filler != b.filler;
      const bool cnt_conflict =
          a.cnt_conc != kBaseline.cnt_conc && b.cnt_conc != kBaseline.cnt_conc && a.cnt_conc != b.cnt_conc;
      if (!filler_conflict && !cnt_conflict) {
        device::MaterialConfig combo{a.filler != kBaseline.filler ? a.filler : b.filler,
                                     a.cnt_conc != kBaseline.cnt_conc ? a.cnt_conc : b.cnt_conc};
        const bool tested = std::any_of(cells.begin(), cells.end(), [&](auto* s) { return s->cell.material == combo; });
        if (!tested) sel.stage3 = combo;
      }
    }
    out.push_back(sel);
  }
  return out;
}

std::vector<PlannedTrial> plan_stage3(const std::vector<MaterialSelection>& selections, const ParamSpace& space) {
  std::vector<PlannedTrial> plan;
  for (const auto& s : selections) {
    if (!s.stage3) continue;
    const Cell cell{s.point, *s.stage3};
    for (int k = 0; k < space.replicates_per_cell; ++k) plan.push_back({3, cell, k, make_device_id(3, cell, k)});
  }
  return plan;
}

double percent_change(double value, double reference) {
  if (reference == 0.0) throw ValidationError("percent change against a zero reference");
  return (value - reference) / reference * 100.0;
}

CampaignReport compile_report(const std::vector<TrialRecord>& records, const std::vector<OperatingPoint>& boundary,
                              const std::vector<MaterialSelection>& selections) {
  CampaignReport rep;
  rep.trials = records.size();
  for (int stage = 1; stage <= 3; ++stage) {
    auto s = summarize(records, stage);
    rep.cells.insert(rep.cells.end(), s.begin(), s.end());
  }
  rep.boundary = boundary;
  rep.selections = selections;

  for (const auto& p : boundary) {
    const CellSummary* base = nullptr;
    const CellSummary* best = nullptr;
    const CellSummary* worst = nullptr;
    for (const auto& s : rep.cells) {
      if (s.cell.point != p || s.completed == 0 || s.stage == 1) continue;
      if (s.stage == 2 && s.cell.material == kBaseline) base = &s;
      if (!best || s.lifetime_mean > best->lifetime_mean) best = &s;
      if (s.stage == 2 && (!worst || s.lifetime_mean < worst->lifetime_mean)) worst = &s;
    }
    if (!base) throw SelectionError("no completed baseline cell at " + point_label(p));
    const auto row = [](const char* role, const CellSummary* s) {
      return ComparisonRow{role, s->cell.material, s->stage, s->lifetime_mean, s->displacement_mean};
    };
    BoundaryComparison c;
    c.point = p;
    c.best = row("best", best);
    c.baseline = row("baseline", base);
    c.worst = row("worst", worst);
    c.lifetime_gain_vs_baseline_pct = percent_change(best->lifetime_mean, base->lifetime_mean);
    c.lifetime_gain_vs_worst_pct = percent_change(best->lifetime_mean, worst->lifetime_mean);
    c.displacement_delta_vs_baseline_pct = percent_change(best->displacement_mean, base->displacement_mean);
    c.displacement_delta_vs_worst_pct = percent_change(best->displacement_mean, worst->displacement_mean);
    for (const auto& sel : selections) {
      if (sel.point == p) c.stage3 = sel.stage3;
    }
    rep.comparisons.push_back(c);
  }
  return rep;
}

}  // namespace dealab::campaign
