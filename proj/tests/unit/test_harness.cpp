#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "scalelab/config.hpp"
#include "scalelab/harness.hpp"

using namespace scalelab;
namespace fs = std::filesystem;

namespace {

RunLog example_log() {
  RunLog log;
  log.records = {{1, 0.01, 0.002, 10.0}, {2, 0.005, 0.0012, 21.5}};
  log.status = RunStatus::reached(2, 21.5);
  return log;
}

RunRecord reached(ScalingMode m, ScheduleMode s, int n, std::size_t rep, double secs) {
  RunRecord r;
  r.scaling = m;
  r.schedule = s;
  r.workers = n;
  r.repetition = rep;
  r.result = {Outcome::Reached, secs, 3, {}};
  return r;
}

}  // namespace

TEST(TimeToLoss, FirstCrossing) {
  const auto t = time_to_loss(example_log(), 0.0016384);
  EXPECT_EQ(t.outcome, Outcome::Reached);
  EXPECT_EQ(t.seconds, 21.5);
  EXPECT_EQ(t.epoch, 2u);
  EXPECT_EQ(time_to_loss(example_log(), 0.002).seconds, 10.0);
}

TEST(TimeToLoss, NotReachedAndDiverged) {
  auto log = example_log();
  log.status = RunStatus::exhausted();
  EXPECT_EQ(time_to_loss(log, 1e-4).outcome, Outcome::NotReached);
  log.status = RunStatus::diverged(3, DivergenceCause::Inf);
  const auto t = time_to_loss(log, 1e-4);
  EXPECT_EQ(t.outcome, Outcome::Diverged);
  EXPECT_EQ(t.cause, DivergenceCause::Inf);
}

TEST(TimeToLoss, MonotoneInTarget) {
  RunLog log;
  double val = 0.01;
  for (std::size_t e = 1; e <= 30; ++e) {
    val *= (e % 3 == 0) ? 1.05 : 0.9;
    log.records.push_back({e, val, val, 1.5 * e});
  }
  double prev = std::numeric_limits<double>::infinity();
  for (double target = 1e-4; target < 0.02; target *= 1.1) {
    const auto t = time_to_loss(log, target);
    if (t.outcome != Outcome::Reached) continue;
    EXPECT_LE(t.seconds, prev);
    prev = t.seconds;
  }
}

TEST(TimeToLoss, MalformedLogsThrow) {
  auto log = example_log();
  log.records[1].epoch = 5;
  EXPECT_THROW(time_to_loss(log, 0.1), Error);
  log = example_log();
  log.records[1].elapsed_s = 1.0;
  EXPECT_THROW(time_to_loss(log, 0.1), Error);
}

TEST(Efficiency, Values) {
  EXPECT_EQ(efficiency(37.0, 37.0, 1), 100.0);
  EXPECT_EQ(efficiency(100, 50, 2), 100.0);
  EXPECT_NEAR(efficiency(100, 30, 4), 83.333333, 1e-5);
  EXPECT_THROW(efficiency(0, 1, 1), Error);
  EXPECT_THROW(efficiency(1, -1, 1), Error);
  EXPECT_THROW(efficiency(1, 1, 0), Error);
}

TEST(ConfidenceInterval, Values) {
  const auto c = confidence_interval_95({1, 2, 3});
  EXPECT_EQ(c.mean, 2.0);
  EXPECT_NEAR(c.halfwidth, 2.4841377117195456, 1e-12);
  EXPECT_EQ(confidence_interval_95({5, 5, 5, 5}).halfwidth, 0.0);
  EXPECT_THROW(confidence_interval_95({1}), Error);
}

TEST(ConfidenceInterval, HalfwidthShrinksAsRootN) {
  // Alternating +-1 keeps s fixed as n grows (n even): s^2 = n / (n - 1).
  for (std::size_t n : {4u, 16u, 36u}) {
    std::vector<double> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(i % 2 ? 1.0 : -1.0);
    const double s = std::sqrt(double(n) / double(n - 1));
    EXPECT_NEAR(confidence_interval_95(v).halfwidth, student_t975(n - 1) * s / std::sqrt(double(n)), 1e-12);
  }
}

TEST(StudentT, TableAndTail) {
  EXPECT_NEAR(student_t975(2), 4.302652729696142, 1e-12);
  EXPECT_NEAR(student_t975(10), 2.2281388519649385, 1e-12);
  EXPECT_NEAR(student_t975(40), 2.0210753903062733, 1e-12);
  EXPECT_NEAR(student_t975(41), 2.019540970441376, 1e-8);
  EXPECT_NEAR(student_t975(60), 2.00029782201426, 1e-8);
  EXPECT_NEAR(student_t975(200), 1.9718962236316089, 1e-10);
  EXPECT_GT(student_t975(41), 1.96);
  EXPECT_LT(student_t975(41), student_t975(40));
}

TEST(Speedup, Predictions) {
  for (double n : {1.0, 2.0, 8.0, 32.0}) EXPECT_DOUBLE_EQ(predict_speedup({0, 50, 0}, n), n);
  EXPECT_NEAR(predict_speedup({0, 100, 10}, 8), 2.3529411764705883, 1e-12);
  for (const SpeedupModel& m : {SpeedupModel{1, 2, 3}, SpeedupModel{0, 5, 0}, SpeedupModel{4, 0, 1}})
    EXPECT_DOUBLE_EQ(predict_speedup(m, 1), 1.0);
}

TEST(Speedup, EfficiencyNeverIncreasesWithCommunicationCost) {
  const SpeedupModel m{2, 100, 0.5};
  double prev = predict_speedup(m, 1);
  for (int n = 2; n <= 1024; ++n) {
    const double e = predict_speedup(m, n) / n;
    EXPECT_LE(e, prev + 1e-15) << n;
    prev = e;
  }
}

TEST(Speedup, FitRecoversSyntheticParameters) {
  const SpeedupModel truth{3.5, 120.0, 2.25};
  std::vector<std::pair<double, double>> data;
  for (double n : {1.0, 2.0, 4.0, 8.0, 16.0, 32.0}) data.push_back({n, truth.t_s + truth.t_p / n + truth.c * std::log2(n)});
  const auto fit = fit_speedup(data);
  EXPECT_NEAR(fit.model.t_s / truth.t_s, 1.0, 1e-6);
  EXPECT_NEAR(fit.model.t_p / truth.t_p, 1.0, 1e-6);
  EXPECT_NEAR(fit.model.c / truth.c, 1.0, 1e-6);
  EXPECT_LT(fit.residual_norm, 1e-9);
}

TEST(Speedup, PerfectScalingFitsToZeroOverheads) {
  std::vector<std::pair<double, double>> data;
  for (double n : {1.0, 2.0, 4.0, 8.0}) data.push_back({n, 64.0 / n});
  const auto fit = fit_speedup(data);
  EXPECT_NEAR(fit.model.t_s, 0.0, 1e-9);
  EXPECT_NEAR(fit.model.c, 0.0, 1e-9);
  EXPECT_NEAR(fit.model.t_p, 64.0, 1e-9);
}

TEST(Speedup, NonnegativityIsEnforced) {
  // T = -1 + 8 / n fits exactly only with a negative serial term.
  const auto fit = fit_speedup({{1, 7.0}, {2, 3.0}, {4, 1.0}, {8, 0.0}});
  EXPECT_GE(fit.model.t_s, 0.0);
  EXPECT_GE(fit.model.t_p, 0.0);
  EXPECT_GE(fit.model.c, 0.0);
  EXPECT_GT(fit.residual_norm, 0.0);
}

TEST(Speedup, TooFewDistinctCountsIsAnError) {
  EXPECT_THROW(fit_speedup({{1, 10}, {2, 6}}), Error);
  EXPECT_THROW(fit_speedup({{1, 10}, {2, 6}, {2, 6.1}, {1, 9.9}}), Error);
}

TEST(Summary, StrongSingleWorkerIsExactlyHundred) {
  std::vector<RunRecord> runs;
  for (std::size_t r = 0; r < 3; ++r) {
    runs.push_back(reached(ScalingMode::Strong, ScheduleMode::Constant, 1, r, 10.0 + r * 0.37));
    runs.push_back(reached(ScalingMode::Strong, ScheduleMode::Constant, 2, r, 6.0 + r * 0.11));
  }
  const auto tables = summarize(runs);
  ASSERT_EQ(tables.size(), 1u);
  EXPECT_EQ(tables[0].cells[0][0].mean, 100.0);
  EXPECT_EQ(tables[0].cells[0][0].halfwidth, 0.0);
  EXPECT_GT(tables[0].cells[1][0].mean, 0.0);
  EXPECT_EQ(tables[0].cells[1][0].samples, 3u);
}

TEST(Summary, AllDivergedColumnIsNaN) {
  std::vector<RunRecord> runs;
  for (std::size_t r = 0; r < 2; ++r) {
    for (auto s : {ScheduleMode::Constant, ScheduleMode::LinearRule})
      runs.push_back(reached(ScalingMode::Weak, s, 1, r, 10.0));
    runs.push_back(reached(ScalingMode::Weak, ScheduleMode::Constant, 4, r, 4.0));
    RunRecord d = reached(ScalingMode::Weak, ScheduleMode::LinearRule, 4, r, 0.0);
    d.result = {Outcome::Diverged, 0.0, 2, DivergenceCause::NaN};
    runs.push_back(d);
  }
  const auto tables = summarize(runs);
  ASSERT_EQ(tables.size(), 1u);
  const auto& t = tables[0];
  EXPECT_EQ(t.columns, (std::vector<std::string>{"Weak scaling", "Linear scaling rule"}));
  EXPECT_NEAR(t.cells[1][0].mean, 62.5, 1e-12);
  EXPECT_TRUE(std::isnan(t.cells[1][1].mean));
  std::stringstream text, csv;
  write_summary_text(tables, text);
  write_summary_csv(tables, csv);
  EXPECT_NE(text.str().find("NaN"), std::string::npos);
  EXPECT_NE(csv.str().find("weak,4,Linear scaling rule,nan"), std::string::npos) << csv.str();
}

TEST(Summary, ColumnLabels) {
  EXPECT_EQ(column_label(ScalingMode::Weak, ScheduleMode::LinearRuleWithWarmup), "Warmup");
  EXPECT_EQ(column_label(ScalingMode::Strong, ScheduleMode::Constant), "Strong scaling");
}

TEST(LossCurve, GnuplotFormat) {
  std::stringstream ss;
  write_loss_curve(example_log(), ss);
  EXPECT_EQ(ss.str(), "# epoch train_loss val_loss elapsed_s\n1 0.01 0.002 10\n2 0.0050000000000000001 0.0011999999999999999 21.5\n# status=reached epoch=2 elapsed_s=21.5\n");
}

TEST(Plan, ConfigsAndValidation) {
  ExperimentPlan p;
  p.variants = {{ScalingMode::Strong, ScheduleMode::Constant}, {ScalingMode::Weak, ScheduleMode::LinearRule}};
  p.workers = {1, 2};
  p.repetitions = 3;
  p.base.seed = 10;
  const auto cs = p.configs();
  ASSERT_EQ(cs.size(), 12u);
  EXPECT_EQ(cs[0].seed, 10u);
  EXPECT_EQ(cs[2].seed, 12u);
  EXPECT_EQ(cs[11].schedule, ScheduleMode::LinearRule);
  p.repetitions = 0;
  EXPECT_THROW(p.validate(), Error);
}

TEST(Plan, OneConfigTwoRepetitionsEndToEnd) {
  ExperimentPlan p;
  p.base.model.n = 2;
  p.base.model.K = 2;
  p.base.model.latent = 8;
  p.base.model.encoder = {{3, 2}};
  p.base.base_batch = 16;
  p.base.max_epochs = 1;
  p.base.target_loss = 1.0;
  p.workers = {1};
  p.repetitions = 2;
  p.dataset.count = 48;
  p.dataset.grid.n = 2;
  p.dataset.grid.side = 8;
  p.validation_size = 16;
  p.output_dir = (fs::temp_directory_path() / "scalelab_plan_test").string();
  fs::remove_all(p.output_dir);
  const auto result = run_plan(p);
  ASSERT_EQ(result.runs.size(), 2u);
  for (const auto& r : result.runs) {
    EXPECT_TRUE(r.error.empty()) << r.error;
    EXPECT_TRUE(fs::exists(r.log_path));
  }
  EXPECT_TRUE(fs::exists(fs::path(p.output_dir) / "strong_constant_n1_r00.dat"));
  EXPECT_TRUE(fs::exists(fs::path(p.output_dir) / "strong_constant_n1_r01.json"));
  EXPECT_TRUE(fs::exists(fs::path(p.output_dir) / "summary.txt"));
  ASSERT_EQ(result.tables.size(), 1u);
  EXPECT_EQ(result.tables[0].workers.size(), 1u);
  EXPECT_EQ(result.tables[0].cells[0][0].mean, 100.0);

  // The recorded config reproduces the run.
  const auto sidecar = read_json_file((fs::path(p.output_dir) / "strong_constant_n1_r01.json").string());
  TrainConfig c;
  merge_json(sidecar.at("config"), c);
  EXPECT_EQ(c.seed, 1u);
  EXPECT_EQ(c.model, p.base.model);

  const auto reloaded = load_runs(p.output_dir);
  ASSERT_EQ(reloaded.size(), 2u);
  EXPECT_EQ(reloaded[0].result.outcome, Outcome::Reached);
  fs::remove_all(p.output_dir);
}

TEST(Plan, RunFailuresAreRecordedWithoutAborting) {
  ExperimentPlan p;
  p.base.model.n = 2;
  p.base.model.K = 2;
  p.base.model.latent = 8;
  p.base.model.encoder = {{3, 2}};
  p.base.base_batch = 16;
  p.base.max_epochs = 1;
  p.workers = {1};
  p.repetitions = 1;
  p.output_dir = (fs::temp_directory_path() / "scalelab_plan_fail").string();
  fs::remove_all(p.output_dir);
  // Dataset grid disagrees with the model, so the run itself fails.
  Split bad;
  GeneratorOptions g;
  g.count = 40;
  g.grid.n = 3;
  g.grid.side = 4;
  bad = split(generate(g), 8, 0);
  const auto result = run_plan(p, bad);
  ASSERT_EQ(result.runs.size(), 1u);
  EXPECT_FALSE(result.runs[0].error.empty());
  EXPECT_TRUE(std::isnan(result.tables[0].cells[0][0].mean));
  fs::remove_all(p.output_dir);
}

TEST(ConfigJson, RoundTripAndOverrides) {
  TrainConfig c;
  c.scaling = ScalingMode::Weak;
  c.schedule = ScheduleMode::LinearRuleWithWarmup;
  c.workers = 4;
  c.base_lr = 0.002;
  c.model = ModelConfig::paper();
  TrainConfig back;
  merge_json(to_json(c), back);
  EXPECT_EQ(to_json(back), to_json(c));
  merge_json(nlohmann::json{{"lr", 0.5}}, back);
  EXPECT_EQ(back.base_lr, 0.5);
  EXPECT_EQ(back.workers, 4);
  EXPECT_THROW(merge_json(nlohmann::json{{"learning_rate", 1}}, back), Error);
  EXPECT_THROW(merge_json(nlohmann::json{{"workers", "many"}}, back), Error);
}

TEST(ConfigJson, Profiles) {
  TrainConfig c;
  GeneratorOptions g;
  apply_profile("paper", c, g);
  EXPECT_EQ(c.model.K, 50u);
  EXPECT_EQ(g.grid.side, 16u);
  apply_profile("desk", c, g);
  EXPECT_EQ(c.model.K, 8u);
  EXPECT_EQ(g.grid.side, 8u);
  EXPECT_EQ(g.count, 1280u);
  EXPECT_THROW(apply_profile("huge", c, g), Error);
}
