// scalelab: generate datasets, train one configuration, run an experiment
// matrix, or rebuild efficiency tables from existing run logs.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "scalelab/config.hpp"
#include "scalelab/harness.hpp"

namespace fs = std::filesystem;
using namespace scalelab;

namespace {

struct Overrides {
  std::optional<std::string> profile, mode, schedule, optimizer, transport;
  std::optional<int> workers;
  std::optional<std::size_t> batch, max_epochs, threads;
  std::optional<double> lr, target_loss, warmup_epochs;
  std::optional<std::uint64_t> seed;
};

void add_run_flags(CLI::App* app, Overrides& o, bool with_workers) {
  app->add_option("--profile", o.profile, "Model and dataset size")->check(CLI::IsMember({"paper", "desk"}));
  app->add_option("--mode", o.mode, "Scaling mode")->check(CLI::IsMember({"strong", "weak"}));
  app->add_option("--schedule", o.schedule, "Learning-rate schedule")
      ->check(CLI::IsMember({"constant", "linear", "warmup"}));
  if (with_workers) app->add_option("--workers", o.workers, "Number of data-parallel workers")->check(CLI::PositiveNumber);
  app->add_option("--batch", o.batch, "Per-worker batch b (global batch in strong mode)")->check(CLI::PositiveNumber);
  app->add_option("--lr", o.lr, "Base learning rate")->check(CLI::PositiveNumber);
  app->add_option("--seed", o.seed, "Initialisation seed");
  app->add_option("--target-loss", o.target_loss, "Validation loss that ends a run");
  app->add_option("--max-epochs", o.max_epochs, "Epoch cap")->check(CLI::PositiveNumber);
  app->add_option("--warmup-epochs", o.warmup_epochs, "Length of the warmup ramp in epochs");
  app->add_option("--optimizer", o.optimizer, "Update rule")->check(CLI::IsMember({"adam", "sgd"}));
  app->add_option("--transport", o.transport, "All-reduce backend")->check(CLI::IsMember({"inmemory", "socket"}));
  app->add_option("--threads", o.threads, "Cap on concurrently computing workers (overrides SCALELAB_THREADS)");
}

void apply(const Overrides& o, TrainConfig& c, GeneratorOptions& data) {
  if (o.profile) apply_profile(*o.profile, c, data);
  nlohmann::json j = nlohmann::json::object();
  if (o.mode) j["mode"] = *o.mode;
  if (o.schedule) j["schedule"] = *o.schedule;
  if (o.optimizer) j["optimizer"] = *o.optimizer;
  if (o.transport) j["transport"] = *o.transport;
  if (o.workers) j["workers"] = *o.workers;
  if (o.batch) j["batch"] = *o.batch;
  if (o.max_epochs) j["max_epochs"] = *o.max_epochs;
  if (o.threads) j["threads"] = *o.threads;
  if (o.lr) j["lr"] = *o.lr;
  if (o.target_loss) j["target_loss"] = *o.target_loss;
  if (o.warmup_epochs) j["warmup_epochs"] = *o.warmup_epochs;
  if (o.seed) j["seed"] = *o.seed;
  merge_json(j, c);
}

Split load_or_generate(const std::string& data_path, const GeneratorOptions& gen, std::size_t val_size) {
  Dataset all = data_path.empty() ? generate(gen) : load_voxels(data_path);
  return split(all, val_size, gen.seed);
}

int cmd_generate(const std::string& profile, const std::string& config_path, std::optional<std::size_t> count,
                 std::optional<std::uint64_t> seed, const std::string& out) {
  TrainConfig unused;
  GeneratorOptions gen;
  apply_profile(profile, unused, gen);
  if (!config_path.empty()) merge_json(read_json_file(config_path), gen);
  if (count) gen.count = *count;
  if (seed) gen.seed = *seed;
  const Dataset ds = generate(gen);
  save_voxels(ds, out);
  std::cout << "wrote " << ds.size() << " examples of " << ds.side << "^" << ds.n << " voxels to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const Overrides& o, const std::string& data_path,
              std::uint64_t data_seed, const std::string& out_dir, const std::string& checkpoint) {
  TrainConfig c;
  GeneratorOptions gen;
  apply_profile(o.profile.value_or("desk"), c, gen);
  gen.seed = data_seed;
  if (!config_path.empty()) {
    auto j = read_json_file(config_path);
    if (j.contains("dataset")) {
      merge_json(j.at("dataset"), gen);
      j.erase("dataset");
    }
    merge_json(j, c);
  }
  apply(o, c, gen);
  c.validate();

  const Split data = load_or_generate(data_path, gen, kValidationSize);
  fs::create_directories(out_dir);
  const std::string name = run_basename(c, 0);
  const fs::path base = fs::path(out_dir) / name;

  nlohmann::json resolved = {{"config", to_json(c)}, {"repetition", 0}, {"runlog", name + ".csv"},
                             {"loss_curve", name + ".dat"}};
  if (data_path.empty()) resolved["dataset"] = to_json(gen);
  else resolved["dataset_file"] = data_path;

  DataParallelTrainer trainer(c, data.train, data.validation);
  const RunLog log = trainer.train([](const EpochRecord& r) {
    std::cout << "epoch " << r.epoch << "  train " << r.train_loss << "  val " << r.val_loss << "  t " << r.elapsed_s
              << " s\n";
  });
  resolved["status"] = format_status(log.status);
  write_runlog_csv(log, base.string() + ".csv");
  std::ofstream dat(base.string() + ".dat");
  write_loss_curve(log, dat);
  write_json_file(resolved, base.string() + ".json");
  if (!checkpoint.empty()) save_checkpoint(checkpoint, c.model, trainer.replica(0));
  std::cout << format_status(log.status) << "\nrun log: " << base.string() << ".csv\n";
  return log.status.state == RunState::Diverged ? 3 : 0;
}

int cmd_plan(const std::string& config_path, const Overrides& o, const std::vector<int>& workers,
             std::optional<std::size_t> reps, const std::string& out_dir, bool parallel) {
  ExperimentPlan plan;
  apply_profile(o.profile.value_or("desk"), plan.base, plan.dataset);
  if (!config_path.empty()) merge_json(read_json_file(config_path), plan);
  apply(o, plan.base, plan.dataset);
  if (o.mode || o.schedule)
    plan.variants = {{parse_scaling_mode(o.mode.value_or("strong")), parse_schedule_mode(o.schedule.value_or("constant"))}};
  if (!workers.empty()) plan.workers = workers;
  if (reps) plan.repetitions = *reps;
  if (!out_dir.empty()) plan.output_dir = out_dir;
  if (parallel) plan.parallel_runs = true;
  const auto result = run_plan(plan, &std::cout);
  std::cout << "\n";
  write_summary_text(result.tables, std::cout);
  std::size_t failed = 0;
  for (const auto& r : result.runs) failed += !r.error.empty();
  if (failed) std::cerr << failed << " run(s) failed; see the .json sidecars in " << plan.output_dir << "\n";
  return failed ? 2 : 0;
}

int cmd_analyze(const std::string& dir, std::optional<double> target, const std::string& csv_out) {
  const auto runs = load_runs(dir, target.value_or(-1.0));
  if (runs.empty()) throw Error("no run sidecars found in " + dir);
  const auto tables = summarize(runs);
  write_summary_text(tables, std::cout);
  if (!csv_out.empty()) {
    std::ofstream out(csv_out);
    if (!out) throw Error("cannot write " + csv_out);
    write_summary_csv(tables, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-parallel training and scaling-efficiency experiments"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Write a synthetic VOXL dataset");
  std::string gen_profile = "desk", gen_config, gen_out = "dataset.voxl";
  std::optional<std::size_t> gen_count;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--profile", gen_profile)->check(CLI::IsMember({"paper", "desk"}));
  gen->add_option("--config", gen_config, "JSON file with dataset options");
  gen->add_option("--count", gen_count, "Number of examples")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Dataset seed");
  gen->add_option("-o,--out", gen_out, "Output path");

  auto* tr = app.add_subcommand("train", "Train one configuration and write its run log");
  Overrides tr_o;
  std::string tr_config, tr_data, tr_out = "run", tr_ckpt;
  std::uint64_t tr_data_seed = 0;
  tr->add_option("--config", tr_config, "JSON run configuration; flags override it");
  add_run_flags(tr, tr_o, true);
  tr->add_option("--data", tr_data, "VOXL dataset (generated from the profile when omitted)");
  tr->add_option("--data-seed", tr_data_seed, "Seed for the generated dataset and the split");
  tr->add_option("--out-dir", tr_out, "Directory for the run log, loss curve and resolved config");
  tr->add_option("--checkpoint", tr_ckpt, "Write final weights to this DDW1 file");

  auto* pl = app.add_subcommand("plan", "Run an experiment matrix and summarise efficiencies");
  Overrides pl_o;
  std::string pl_config, pl_out;
  std::vector<int> pl_workers;
  std::optional<std::size_t> pl_reps;
  bool pl_parallel = false;
  pl->add_option("--config", pl_config, "JSON plan; flags override it");
  add_run_flags(pl, pl_o, false);
  pl->add_option("--workers", pl_workers, "Worker counts to sweep")->delimiter(',');
  pl->add_option("--repetitions", pl_reps, "Repetitions per configuration")->check(CLI::PositiveNumber);
  pl->add_option("--out-dir", pl_out, "Output directory");
  pl->add_flag("--parallel", pl_parallel, "Run configurations concurrently (elapsed times become unreliable)");

  auto* an = app.add_subcommand("analyze", "Rebuild summary tables from existing run logs");
  std::string an_dir = "runs", an_csv;
  std::optional<double> an_target;
  an->add_option("dir", an_dir, "Directory holding run logs and their .json sidecars");
  an->add_option("--target-loss", an_target, "Re-evaluate time to loss at this target");
  an->add_option("--csv", an_csv, "Also write the tables as CSV");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_generate(gen_profile, gen_config, gen_count, gen_seed, gen_out);
    if (*tr) return cmd_train(tr_config, tr_o, tr_data, tr_data_seed, tr_out, tr_ckpt);
    if (*pl) return cmd_plan(pl_config, pl_o, pl_workers, pl_reps, pl_out, pl_parallel);
    if (*an) return cmd_analyze(an_dir, an_target, an_csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
