#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "scalelab/data.hpp"
#include "scalelab/trainer.hpp"

namespace scalelab {

enum class Outcome { Reached, NotReached, Diverged };
std::string_view to_string(Outcome outcome);

struct TimeToLoss {
  Outcome outcome = Outcome::NotReached;
  double seconds = 0.0;   // Reached only
  std::size_t epoch = 0;  // epoch of the crossing, or of the divergence
  DivergenceCause cause = DivergenceCause::NaN;
};

/// First epoch whose validation loss is <= target. A log with no crossing is
/// NotReached, or Diverged when its status says so. Throws on logs whose
/// epochs are not 1, 2, 3, ... or whose elapsed times decrease.
TimeToLoss time_to_loss(const RunLog& log, double target);

/// T1 / (n * Tn) * 100.
double efficiency(double t1, double tn, int n);

struct Interval95 {
  double mean = 0.0;
  double halfwidth = 0.0;
};

/// Student-t interval: mean +- t(0.975, n-1) * s / sqrt(n).
Interval95 confidence_interval_95(const std::vector<double>& samples);

/// Two-sided 97.5% quantile of Student's t.
double student_t975(std::size_t df);

struct SpeedupModel {
  double t_s = 0.0;
  double t_p = 0.0;
  double c = 0.0;

  void validate() const;
};

/// (T_S + T_P) / (T_S + T_P / n + c log2 n).
double predict_speedup(const SpeedupModel& model, double n);

struct SpeedupFit {
  SpeedupModel model;
  double residual_norm = 0.0;
};

/// Nonnegative least squares of T_n on [1, 1/n, log2 n]. Needs at least
/// three distinct worker counts.
SpeedupFit fit_speedup(const std::vector<std::pair<double, double>>& measured);

// ---------------------------------------------------------------------------
// Experiment plans

struct PlanVariant {
  ScalingMode scaling = ScalingMode::Strong;
  ScheduleMode schedule = ScheduleMode::Constant;
};

struct ExperimentPlan {
  TrainConfig base;
  std::vector<PlanVariant> variants{{ScalingMode::Strong, ScheduleMode::Constant}};
  std::vector<int> workers{1, 2, 4, 8, 16, 32};
  std::size_t repetitions = 11;
  std::string output_dir = "runs";
  GeneratorOptions dataset;
  std::size_t validation_size = kValidationSize;
  /// Runs execute one at a time unless set; parallel runs contend for cores
  /// and their elapsed times stop being comparable.
  bool parallel_runs = false;

  void validate() const;
  /// Expanded run configurations in execution order; repetition r uses seed base.seed + r.
  std::vector<TrainConfig> configs() const;
};

struct RunRecord {
  ScalingMode scaling = ScalingMode::Strong;
  ScheduleMode schedule = ScheduleMode::Constant;
  int workers = 1;
  std::size_t repetition = 0;
  TimeToLoss result;
  std::string error;  // non-empty when the run itself failed
  std::string log_path;
};

struct SummaryCell {
  double mean = 0.0;  // NaN when no repetition reached the target at this N and at N=1
  double halfwidth = 0.0;
  std::size_t samples = 0;
};

struct SummaryTable {
  ScalingMode scaling = ScalingMode::Strong;
  std::vector<std::string> columns;
  std::vector<int> workers;
  std::vector<std::vector<SummaryCell>> cells;  // [row][column]
  std::vector<std::string> notes;
};

/// Column heading for a (scaling, schedule) pair, e.g. "Warmup" for weak + warmup.
std::string column_label(ScalingMode scaling, ScheduleMode schedule);

/// One table per scaling mode. Efficiencies are paired by repetition:
/// run r at N is compared with run r at N=1 of the same column.
std::vector<SummaryTable> summarize(const std::vector<RunRecord>& runs);

void write_summary_text(const std::vector<SummaryTable>& tables, std::ostream& out);
void write_summary_csv(const std::vector<SummaryTable>& tables, std::ostream& out);

/// `# epoch train_loss val_loss elapsed_s` then whitespace-separated rows.
void write_loss_curve(const RunLog& log, std::ostream& out);

struct PlanResult {
  std::vector<RunRecord> runs;
  std::vector<SummaryTable> tables;
};

std::string run_basename(const TrainConfig& config, std::size_t repetition);

/// Runs every configuration against the given split, writing `<name>.csv`,
/// `<name>.json` and `<name>.dat` per run plus summary.txt / summary.csv.
/// A failing run is recorded and the plan continues.
PlanResult run_plan(const ExperimentPlan& plan, const Split& data, std::ostream* progress = nullptr);
/// Generates and splits the plan's dataset first.
PlanResult run_plan(const ExperimentPlan& plan, std::ostream* progress = nullptr);

/// Rebuilds run records from the `.json` sidecars in a directory.
std::vector<RunRecord> load_runs(const std::string& directory, double target_override = -1.0);

}  // namespace scalelab
