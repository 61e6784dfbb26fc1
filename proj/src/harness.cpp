#include "scalelab/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "scalelab/config.hpp"
#include "scalelab/numerics.hpp"

namespace scalelab {

namespace fs = std::filesystem;

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::Reached: return "reached";
    case Outcome::NotReached: return "not_reached";
    case Outcome::Diverged: return "diverged";
  }
  return "unknown";
}

TimeToLoss time_to_loss(const RunLog& log, double target) {
  double last_elapsed = 0.0;
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    const auto& r = log.records[i];
    if (r.epoch != i + 1)
      throw Error("malformed run log: row " + std::to_string(i + 1) + " has epoch " + std::to_string(r.epoch));
    if (!(r.elapsed_s >= last_elapsed))
      throw Error("malformed run log: elapsed time decreases at epoch " + std::to_string(r.epoch));
    last_elapsed = r.elapsed_s;
  }
  for (const auto& r : log.records)
    if (r.val_loss <= target) return {Outcome::Reached, r.elapsed_s, r.epoch, {}};
  if (log.status.state == RunState::Diverged) return {Outcome::Diverged, 0.0, log.status.epoch, log.status.cause};
  return {};
}

double efficiency(double t1, double tn, int n) {
  if (!(t1 > 0.0) || !(tn > 0.0)) throw Error("efficiency needs positive times");
  if (n < 1) throw Error("efficiency needs n >= 1");
  return t1 / (static_cast<double>(n) * tn) * 100.0;
}

namespace {

constexpr std::array<double, 40> kT975{
    12.706204736432095, 4.302652729696142, 3.182446305284263, 2.7764451051977987,
    2.570581835636314, 2.4469118511449692, 2.3646242515927844, 2.306004135204166,
    2.2621571628540993, 2.2281388519649385, 2.200985160082949, 2.1788128296634177,
    2.1603686564610127, 2.1447866879169273, 2.131449545559323, 2.1199052992210112,
    2.1098155778331806, 2.10092204024096, 2.093024054408263, 2.0859634472658364,
    2.079613844727662, 2.0738730679040147, 2.0686576104190406, 2.0638985616280205,
    2.059538552753294, 2.055529438642871, 2.0518305164802833, 2.048407141795244,
    2.045229642132703, 2.0422724563012373, 2.0395134463964077, 2.036933343460101,
    2.0345152974493383, 2.032244509317718, 2.0301079282503425, 2.0280940009804502,
    2.0261924630291093, 2.024394163911969, 2.0226909200367604, 2.0210753903062733
};

}  // namespace

double student_t975(std::size_t df) {
  if (df == 0) throw Error("t quantile needs df >= 1");
  if (df <= kT975.size()) return kT975[df - 1];
  // Cornish-Fisher expansion around the normal quantile.
  const double z = 1.959963984540054;
  const double v = static_cast<double>(df);
  const double z2 = z * z;
  const double g1 = z * (z2 + 1.0) / 4.0;
  const double g2 = z * ((5.0 * z2 + 16.0) * z2 + 3.0) / 96.0;
  const double g3 = z * (((3.0 * z2 + 19.0) * z2 + 17.0) * z2 - 15.0) / 384.0;
  const double g4 = z * ((((79.0 * z2 + 776.0) * z2 + 1482.0) * z2 - 1920.0) * z2 - 945.0) / 92160.0;
  return z + g1 / v + g2 / (v * v) + g3 / (v * v * v) + g4 / (v * v * v * v);
}

Interval95 confidence_interval_95(const std::vector<double>& samples) {
  if (samples.size() < 2) throw Error("confidence interval needs at least 2 samples");
  const double n = static_cast<double>(samples.size());
  const double mean = tree_sum(samples) / n;
  std::vector<double> sq(samples.size());
  std::transform(samples.begin(), samples.end(), sq.begin(), [&](double x) { return (x - mean) * (x - mean); });
  const double s = std::sqrt(tree_sum(sq) / (n - 1.0));
  return {mean, student_t975(samples.size() - 1) * s / std::sqrt(n)};
}

void SpeedupModel::validate() const {
  if (t_s < 0.0 || t_p < 0.0 || c < 0.0) throw Error("speedup model terms must be nonnegative");
  if (!(t_s + t_p > 0.0)) throw Error("speedup model needs T_S + T_P > 0");
}

double predict_speedup(const SpeedupModel& m, double n) {
  return (m.t_s + m.t_p) / (m.t_s + m.t_p / n + m.c * std::log2(n));
}

namespace {

// Least squares restricted to the columns in `active`; returns false when
// the restricted normal matrix is singular.
bool restricted_lsq(const std::vector<std::array<double, 3>>& rows, const std::vector<double>& y,
                    const std::vector<std::size_t>& active, std::array<double, 3>& out) {
  const std::size_t k = active.size();
  Matrix g(k, k);
  std::vector<double> rhs(k, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t a = 0; a < k; ++a) {
      rhs[a] += rows[i][active[a]] * y[i];
      for (std::size_t b = 0; b < k; ++b) g(a, b) += rows[i][active[a]] * rows[i][active[b]];
    }
  Matrix l;
  try {
    l = cholesky(g);
  } catch (const NotPositiveDefinite&) {
    return false;
  }
  for (std::size_t a = 0; a < k; ++a)
    if (l(a, a) * l(a, a) <= 1e-12 * g(a, a)) return false;
  const auto x = backward_substitute_transposed(l, forward_substitute(l, rhs));
  out = {0.0, 0.0, 0.0};
  for (std::size_t a = 0; a < k; ++a) out[active[a]] = x[a];
  return true;
}

}  // namespace

SpeedupFit fit_speedup(const std::vector<std::pair<double, double>>& measured) {
  std::set<double> distinct;
  std::vector<std::array<double, 3>> rows;
  std::vector<double> y;
  for (const auto& [n, t] : measured) {
    if (!(n >= 1.0)) throw Error("speedup fit needs worker counts >= 1");
    if (!std::isfinite(t)) throw Error("speedup fit needs finite times");
    distinct.insert(n);
    rows.push_back({1.0, 1.0 / n, std::log2(n)});
    y.push_back(t);
  }
  if (distinct.size() < 3)
    throw Error("speedup fit needs at least 3 distinct worker counts, got " + std::to_string(distinct.size()));
  std::array<double, 3> full{};
  if (!restricted_lsq(rows, y, {0, 1, 2}, full)) throw Error("speedup fit design matrix is rank-deficient");

  // Three unknowns: enumerate the active sets and keep the best feasible one.
  SpeedupFit best;
  double best_res = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < 8; ++mask) {
    std::vector<std::size_t> active;
    for (std::size_t j = 0; j < 3; ++j)
      if (mask & (1u << j)) active.push_back(j);
    std::array<double, 3> x{0.0, 0.0, 0.0};
    if (!active.empty() && !restricted_lsq(rows, y, active, x)) continue;
    if (x[0] < 0.0 || x[1] < 0.0 || x[2] < 0.0) continue;
    std::vector<double> sq(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double r = rows[i][0] * x[0] + rows[i][1] * x[1] + rows[i][2] * x[2] - y[i];
      sq[i] = r * r;
    }
    const double res = std::sqrt(tree_sum(sq));
    if (res < best_res) {
      best_res = res;
      best.model = {x[0], x[1], x[2]};
      best.residual_norm = res;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

void ExperimentPlan::validate() const {
  if (repetitions < 1) throw Error("plan needs at least one repetition");
  if (variants.empty()) throw Error("plan has no variants");
  if (workers.empty()) throw Error("plan has no worker counts");
  for (const auto& c : configs()) c.validate();
}

std::vector<TrainConfig> ExperimentPlan::configs() const {
  std::vector<TrainConfig> out;
  for (const auto& v : variants)
    for (int n : workers)
      for (std::size_t r = 0; r < repetitions; ++r) {
        TrainConfig c = base;
        c.scaling = v.scaling;
        c.schedule = v.schedule;
        c.workers = n;
        c.seed = base.seed + r;
        out.push_back(c);
      }
  return out;
}

std::string column_label(ScalingMode scaling, ScheduleMode schedule) {
  if (scaling == ScalingMode::Weak) {
    switch (schedule) {
      case ScheduleMode::Constant: return "Weak scaling";
      case ScheduleMode::LinearRuleWithWarmup: return "Warmup";
      case ScheduleMode::LinearRule: return "Linear scaling rule";
    }
  }
  if (schedule == ScheduleMode::Constant) return "Strong scaling";
  return "Strong scaling (" + std::string(to_string(schedule)) + ")";
}

namespace {

int schedule_rank(ScheduleMode s) {
  switch (s) {
    case ScheduleMode::Constant: return 0;
    case ScheduleMode::LinearRuleWithWarmup: return 1;
    case ScheduleMode::LinearRule: return 2;
  }
  return 3;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::vector<SummaryTable> summarize(const std::vector<RunRecord>& runs) {
  std::vector<SummaryTable> tables;
  for (ScalingMode mode : {ScalingMode::Strong, ScalingMode::Weak}) {
    std::set<ScheduleMode, bool (*)(ScheduleMode, ScheduleMode)> schedules(
        [](ScheduleMode a, ScheduleMode b) { return schedule_rank(a) < schedule_rank(b); });
    std::set<int> workers;
    for (const auto& r : runs)
      if (r.scaling == mode) {
        schedules.insert(r.schedule);
        workers.insert(r.workers);
      }
    if (schedules.empty()) continue;

    SummaryTable t;
    t.scaling = mode;
    t.workers.assign(workers.begin(), workers.end());
    for (ScheduleMode s : schedules) t.columns.push_back(column_label(mode, s));
    t.cells.assign(t.workers.size(), std::vector<SummaryCell>(t.columns.size()));

    std::size_t col = 0;
    for (ScheduleMode s : schedules) {
      std::map<std::size_t, double> baseline;  // repetition -> T1
      for (const auto& r : runs)
        if (r.scaling == mode && r.schedule == s && r.workers == 1 && r.error.empty() &&
            r.result.outcome == Outcome::Reached)
          baseline[r.repetition] = r.result.seconds;
      bool has_baseline_runs = false;
      for (const auto& r : runs)
        if (r.scaling == mode && r.schedule == s && r.workers == 1) has_baseline_runs = true;
      if (!has_baseline_runs) t.notes.push_back(t.columns[col] + ": no N=1 runs, efficiencies undefined");

      for (std::size_t row = 0; row < t.workers.size(); ++row) {
        const int n = t.workers[row];
        std::vector<double> effs;
        for (const auto& r : runs) {
          if (r.scaling != mode || r.schedule != s || r.workers != n || !r.error.empty()) continue;
          if (r.result.outcome != Outcome::Reached) continue;
          const auto b = baseline.find(r.repetition);
          if (b == baseline.end()) continue;
          if (!(b->second > 0.0) || !(r.result.seconds > 0.0)) continue;
          effs.push_back(efficiency(b->second, r.result.seconds, n));
        }
        SummaryCell& cell = t.cells[row][col];
        cell.samples = effs.size();
        if (effs.empty()) {
          cell.mean = kNaN;
          cell.halfwidth = kNaN;
        } else if (effs.size() == 1) {
          cell.mean = effs.front();
          cell.halfwidth = 0.0;
        } else {
          const auto ci = confidence_interval_95(effs);
          cell.mean = ci.mean;
          cell.halfwidth = ci.halfwidth;
        }
      }
      ++col;
    }
    tables.push_back(std::move(t));
  }
  return tables;
}

namespace {

std::string format_cell(const SummaryCell& c) {
  if (std::isnan(c.mean)) return "NaN";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f +- %.2f", c.mean, c.halfwidth);
  return buf;
}

}  // namespace

void write_summary_text(const std::vector<SummaryTable>& tables, std::ostream& out) {
  for (std::size_t ti = 0; ti < tables.size(); ++ti) {
    const auto& t = tables[ti];
    if (ti) out << "\n";
    out << (t.scaling == ScalingMode::Strong ? "Strong" : "Weak")
        << " scaling efficiency (%), mean +- 95% CI over paired repetitions\n";
    std::vector<std::size_t> widths{std::string("Workers").size()};
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      std::size_t w = t.columns[c].size();
      for (const auto& row : t.cells) w = std::max(w, format_cell(row[c]).size());
      widths.push_back(w);
    }
    out << std::setw(static_cast<int>(widths[0])) << "Workers";
    for (std::size_t c = 0; c < t.columns.size(); ++c)
      out << "  " << std::setw(static_cast<int>(widths[c + 1])) << t.columns[c];
    out << "\n";
    for (std::size_t r = 0; r < t.workers.size(); ++r) {
      out << std::setw(static_cast<int>(widths[0])) << t.workers[r];
      for (std::size_t c = 0; c < t.columns.size(); ++c)
        out << "  " << std::setw(static_cast<int>(widths[c + 1])) << format_cell(t.cells[r][c]);
      out << "\n";
    }
    for (const auto& note : t.notes) out << "note: " << note << "\n";
  }
}

void write_summary_csv(const std::vector<SummaryTable>& tables, std::ostream& out) {
  out << "scaling,workers,column,mean,halfwidth,samples\n";
  char buf[256];
  for (const auto& t : tables)
    for (std::size_t r = 0; r < t.workers.size(); ++r)
      for (std::size_t c = 0; c < t.columns.size(); ++c) {
        const auto& cell = t.cells[r][c];
        std::snprintf(buf, sizeof buf, "%s,%d,%s,%.17g,%.17g,%zu\n", std::string(to_string(t.scaling)).c_str(),
                      t.workers[r], t.columns[c].c_str(), cell.mean, cell.halfwidth, cell.samples);
        out << buf;
      }
}

void write_loss_curve(const RunLog& log, std::ostream& out) {
  out << "# epoch train_loss val_loss elapsed_s\n";
  char buf[160];
  for (const auto& r : log.records) {
    std::snprintf(buf, sizeof buf, "%zu %.17g %.17g %.17g\n", r.epoch, r.train_loss, r.val_loss, r.elapsed_s);
    out << buf;
  }
  out << "# " << format_status(log.status) << "\n";
}

std::string run_basename(const TrainConfig& c, std::size_t repetition) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%s_%s_n%d_r%02zu", std::string(to_string(c.scaling)).c_str(),
                std::string(to_string(c.schedule)).c_str(), c.workers, repetition);
  return buf;
}

namespace {

RunRecord execute_run(const TrainConfig& config, std::size_t repetition, const ExperimentPlan& plan,
                      const Split& data) {
  RunRecord rec;
  rec.scaling = config.scaling;
  rec.schedule = config.schedule;
  rec.workers = config.workers;
  rec.repetition = repetition;
  const fs::path dir(plan.output_dir);
  const std::string name = run_basename(config, repetition);
  rec.log_path = (dir / (name + ".csv")).string();

  nlohmann::json sidecar;
  sidecar["config"] = to_json(config);
  sidecar["repetition"] = repetition;
  sidecar["dataset"] = to_json(plan.dataset);
  sidecar["validation_size"] = plan.validation_size;
  sidecar["runlog"] = name + ".csv";
  sidecar["loss_curve"] = name + ".dat";
  try {
    const RunLog log = train(config, data.train, data.validation);
    write_runlog_csv(log, rec.log_path);
    std::ofstream dat(dir / (name + ".dat"));
    if (!dat) throw Error("cannot write " + (dir / (name + ".dat")).string());
    write_loss_curve(log, dat);
    rec.result = time_to_loss(log, config.target_loss);
    sidecar["status"] = format_status(log.status);
  } catch (const std::exception& e) {
    rec.error = e.what();
    sidecar["error"] = rec.error;
  }
  try {
    write_json_file(sidecar, (dir / (name + ".json")).string());
  } catch (const std::exception& e) {
    if (rec.error.empty()) rec.error = e.what();
  }
  return rec;
}

}  // namespace

PlanResult run_plan(const ExperimentPlan& plan, const Split& data, std::ostream* progress) {
  plan.validate();
  fs::create_directories(plan.output_dir);
  const auto configs = plan.configs();
  PlanResult result;
  result.runs.resize(configs.size());
  std::mutex io;

  auto run_one = [&](std::size_t i) {
    const std::size_t rep = i % plan.repetitions;
    result.runs[i] = execute_run(configs[i], rep, plan, data);
    if (progress) {
      std::lock_guard lock(io);
      const auto& r = result.runs[i];
      *progress << run_basename(configs[i], rep) << ": "
                << (r.error.empty() ? std::string(to_string(r.result.outcome)) : "error: " + r.error);
      if (r.error.empty() && r.result.outcome == Outcome::Reached) *progress << " in " << r.result.seconds << " s";
      *progress << "\n";
    }
  };

  if (plan.parallel_runs) {
    if (progress) *progress << "warning: runs execute concurrently, elapsed times are not comparable\n";
    std::atomic<std::size_t> next{0};
    const std::size_t threads =
        std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), configs.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) run_one(i);
      });
    for (auto& t : pool) t.join();
  } else {
    for (std::size_t i = 0; i < configs.size(); ++i) run_one(i);
  }

  result.tables = summarize(result.runs);
  const fs::path dir(plan.output_dir);
  std::ofstream txt(dir / "summary.txt"), csv(dir / "summary.csv");
  if (!txt || !csv) throw Error("cannot write summary files in " + plan.output_dir);
  write_summary_text(result.tables, txt);
  write_summary_csv(result.tables, csv);
  write_json_file(to_json(plan), (dir / "plan.json").string());
  return result;
}

PlanResult run_plan(const ExperimentPlan& plan, std::ostream* progress) {
  const Dataset all = generate(plan.dataset);
  const Split data = split(all, plan.validation_size, plan.dataset.seed);
  return run_plan(plan, data, progress);
}

std::vector<RunRecord> load_runs(const std::string& directory, double target_override) {
  if (!fs::is_directory(directory)) throw Error(directory + " is not a directory");
  std::vector<fs::path> sidecars;
  for (const auto& entry : fs::directory_iterator(directory))
    if (entry.path().extension() == ".json" && entry.path().filename() != "plan.json")
      sidecars.push_back(entry.path());
  std::sort(sidecars.begin(), sidecars.end());

  std::vector<RunRecord> runs;
  for (const auto& path : sidecars) {
    const auto j = read_json_file(path.string());
    if (!j.contains("runlog") || !j.contains("config")) continue;
    TrainConfig c;
    merge_json(j.at("config"), c);
    RunRecord r;
    r.scaling = c.scaling;
    r.schedule = c.schedule;
    r.workers = c.workers;
    r.repetition = j.value("repetition", std::size_t{0});
    r.log_path = (path.parent_path() / j.at("runlog").get<std::string>()).string();
    if (j.contains("error")) {
      r.error = j.at("error").get<std::string>();
    } else {
      try {
        r.result = time_to_loss(read_runlog_csv(r.log_path), target_override > 0.0 ? target_override : c.target_loss);
      } catch (const std::exception& e) {
        r.error = e.what();
      }
    }
    runs.push_back(std::move(r));
  }
  return runs;
}

}  // namespace scalelab
