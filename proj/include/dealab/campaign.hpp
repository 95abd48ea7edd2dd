#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dealab/analysis.hpp"
#include "dealab/devicemodel.hpp"
#include "dealab/rig.hpp"

namespace dealab::campaign {

inline constexpr int kSchemaVersion = 1;
inline constexpr int kEarlyStopReplicates = 3;
inline const device::MaterialConfig kBaseline{device::Filler::CB, 2.5};

struct OperatingPoint {
  double field = 0.0;  // V/um
  double freq = 0.0;   // Hz

  friend auto operator<=>(const OperatingPoint&, const OperatingPoint&) = default;
};

struct Cell {
  OperatingPoint point{};
  device::MaterialConfig material = kBaseline;

  friend bool operator==(const Cell& a, const Cell& b) {
    return a.point == b.point && a.material.filler == b.material.filler && a.material.cnt_conc == b.material.cnt_conc;
  }
  friend bool operator<(const Cell& a, const Cell& b);
};

[[nodiscard]] std::string cell_label(const Cell& c);

struct ParamSpace {
  std::vector<double> fields{35, 40, 45, 50};
  std::vector<double> frequencies{1, 5, 10, 50};
  std::vector<device::Filler> fillers{device::Filler::LM, device::Filler::CB, device::Filler::CG};
  std::vector<double> cnt_concs{1.8, 2.2, 2.5, 2.9, 3.3};
  int replicates_per_cell = 5;
  double lifetime_cap = 10800.0;  // s

  void validate() const;
};

struct PlannedTrial {
  int stage = 1;
  Cell cell{};
  int replicate = 0;
  std::string device_id;

  friend bool operator==(const PlannedTrial&, const PlannedTrial&) = default;
};

[[nodiscard]] std::string make_device_id(int stage, const Cell& cell, int replicate);

struct TrialRecord {
  int stage = 1;
  Cell cell{};
  int replicate = 0;
  std::string device_id;
  int channel = 0;
  std::uint64_t seed = 0;
  rig::TrialStatus status = rig::TrialStatus::Complete;
  analysis::LifetimeResult lifetime{};
  double avg_displacement = 0.0;  // mm
  std::optional<double> capacitance_degradation;
  std::string telemetry_ref;
  std::string note;

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

struct CellSummary {
  int stage = 1;
  Cell cell{};
  int trials = 0;    // records of any status
  int completed = 0;
  int censored = 0;
  bool stable = false;
  double lifetime_mean = 0.0;
  double lifetime_std = 0.0;
  double displacement_mean = 0.0;
  double displacement_std = 0.0;

  friend bool operator==(const CellSummary&, const CellSummary&) = default;
};

/// Per-cell statistics over Complete records, in cell order.
[[nodiscard]] std::vector<CellSummary> summarize(const std::vector<TrialRecord>& records, int stage);

/// Trials still to run in stage 1 given what has been recorded so far. A cell
/// first gets min(3, replicates) trials; once those are in, it is Stable if all
/// three were censored, otherwise the remaining replicates are planned.
[[nodiscard]] std::vector<PlannedTrial> plan_stage1(const ParamSpace& space,
                                                    const std::vector<TrialRecord>& results = {});

[[nodiscard]] bool is_stable(const std::vector<TrialRecord>& cell_records);

struct BoundaryOptions {
  double floor_s = 1500.0;
  /// Frequencies to pick a boundary at. Empty means the lowest and highest tested.
  std::vector<double> frequencies;
};

[[nodiscard]] std::vector<OperatingPoint> select_boundary(const std::vector<CellSummary>& stage1, const ParamSpace& space,
                                                          const BoundaryOptions& opts = {});

[[nodiscard]] std::vector<PlannedTrial> plan_stage2(const std::vector<OperatingPoint>& boundary, const ParamSpace& space);

struct MaterialSelection {
  OperatingPoint point{};
  device::MaterialConfig lifetime_best{};
  device::MaterialConfig displacement_best{};
  std::optional<device::MaterialConfig> stage3;

  friend bool operator==(const MaterialSelection&, const MaterialSelection&) = default;
};

[[nodiscard]] std::vector<MaterialSelection> select_best_material(const std::vector<CellSummary>& stage2,
                                                                  const std::vector<OperatingPoint>& boundary);

[[nodiscard]] std::vector<PlannedTrial> plan_stage3(const std::vector<MaterialSelection>& selections,
                                                    const ParamSpace& space);

struct ComparisonRow {
  std::string role;  // best, baseline, worst
  device::MaterialConfig material{};
  int stage = 2;
  double lifetime_mean = 0.0;
  double displacement_mean = 0.0;

  friend bool operator==(const ComparisonRow&, const ComparisonRow&) = default;
};

struct BoundaryComparison {
  OperatingPoint point{};
  ComparisonRow best{};
  ComparisonRow baseline{};
  ComparisonRow worst{};
  double lifetime_gain_vs_baseline_pct = 0.0;
  double lifetime_gain_vs_worst_pct = 0.0;
  double displacement_delta_vs_baseline_pct = 0.0;
  double displacement_delta_vs_worst_pct = 0.0;
  std::optional<device::MaterialConfig> stage3;

  friend bool operator==(const BoundaryComparison&, const BoundaryComparison&) = default;
};

struct CampaignReport {
  int schema_version = kSchemaVersion;
  std::string name;
  std::uint64_t seed = 0;
  std::size_t trials = 0;
  std::vector<CellSummary> cells;
  std::vector<OperatingPoint> boundary;
  std::vector<MaterialSelection> selections;
  std::vector<BoundaryComparison> comparisons;

  friend bool operator==(const CampaignReport&, const CampaignReport&) = default;
};

[[nodiscard]] double percent_change(double value, double reference);

/// Best is the longest-lived stage-2 or stage-3 cell at each boundary, worst
/// the shortest-lived stage-2 cell, baseline the (CB, 2.5) cell.
[[nodiscard]] CampaignReport compile_report(const std::vector<TrialRecord>& records,
                                            const std::vector<OperatingPoint>& boundary,
                                            const std::vector<MaterialSelection>& selections);

}  // namespace dealab::campaign
