#include "scalelab/trainer.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <semaphore>
#include <sstream>
#include <thread>

#include "scalelab/rng.hpp"

namespace scalelab {

std::string_view to_string(ScalingMode mode) { return mode == ScalingMode::Strong ? "strong" : "weak"; }

ScalingMode parse_scaling_mode(std::string_view text) {
  if (text == "strong") return ScalingMode::Strong;
  if (text == "weak") return ScalingMode::Weak;
  throw Error("unknown scaling mode '" + std::string(text) + "' (expected strong or weak)");
}

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adam") return OptimizerKind::Adam;
  if (text == "sgd") return OptimizerKind::SGD;
  throw Error("unknown optimizer '" + std::string(text) + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  if (workers < 1) throw Error("workers must be >= 1");
  if (base_batch < 1) throw Error("batch size must be >= 1");
  if (!(base_lr > 0.0)) throw Error("learning rate must be positive");
  if (max_epochs < 1) throw Error("max_epochs must be >= 1");
  if (scaling == ScalingMode::Strong) {
    const auto n = static_cast<unsigned>(workers);
    if (!std::has_single_bit(n) || base_batch % n != 0)
      throw Error("strong scaling needs a power-of-two worker count dividing the batch (" +
                  std::to_string(workers) + " workers, batch " + std::to_string(base_batch) + ")");
  }
  model.validate();
}

std::size_t effective_batch(ScalingMode mode, std::size_t base_batch, int workers) {
  return mode == ScalingMode::Strong ? base_batch : base_batch * static_cast<std::size_t>(workers);
}

std::vector<std::vector<std::size_t>> partition_batch(std::span<const std::size_t> batch, int workers) {
  if (workers < 1) throw Error("partition needs at least one worker");
  const auto n = static_cast<std::size_t>(workers);
  if (batch.size() % n != 0)
    throw Error("batch of " + std::to_string(batch.size()) + " cannot be split evenly across " +
                std::to_string(workers) + " workers");
  const std::size_t m = batch.size() / n;
  std::vector<std::vector<std::size_t>> shards(n);
  for (std::size_t i = 0; i < n; ++i) shards[i].assign(batch.begin() + i * m, batch.begin() + (i + 1) * m);
  return shards;
}

// ---------------------------------------------------------------------------
// RunLog CSV

std::string format_status(const RunStatus& s) {
  char buf[128];
  switch (s.state) {
    case RunState::Reached:
      std::snprintf(buf, sizeof buf, "status=reached epoch=%zu elapsed_s=%.17g", s.epoch, s.elapsed_s);
      return buf;
    case RunState::Exhausted:
      return "status=exhausted";
    case RunState::Diverged:
      std::snprintf(buf, sizeof buf, "status=diverged epoch=%zu cause=%s", s.epoch,
                    std::string(to_string(s.cause)).c_str());
      return buf;
  }
  return "status=unknown";
}

void write_runlog_csv(const RunLog& log, std::ostream& out) {
  out << "epoch,train_loss,val_loss,elapsed_s\n";
  char buf[160];
  for (const auto& r : log.records) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_loss, r.elapsed_s);
    out << buf;
  }
  out << "# " << format_status(log.status) << "\n";
}

void write_runlog_csv(const RunLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write run log " + path);
  write_runlog_csv(log, out);
}

namespace {

std::string field(const std::string& line, const std::string& key) {
  const auto at = line.find(key + "=");
  if (at == std::string::npos) return {};
  const auto start = at + key.size() + 1;
  return line.substr(start, line.find(' ', start) - start);
}

DivergenceCause parse_cause(const std::string& s) {
  if (s == "NaN") return DivergenceCause::NaN;
  if (s == "Inf") return DivergenceCause::Inf;
  if (s == "PDFailure") return DivergenceCause::PDFailure;
  throw Error("unknown divergence cause '" + s + "'");
}

}  // namespace

RunLog read_runlog_csv(std::istream& in) {
  RunLog log;
  std::string line;
  if (!std::getline(in, line) || line != "epoch,train_loss,val_loss,elapsed_s")
    throw Error("run log has a missing or wrong header");
  bool have_status = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string st = field(line, "status");
      if (st == "reached") {
        log.status = RunStatus::reached(std::stoul(field(line, "epoch")), std::stod(field(line, "elapsed_s")));
      } else if (st == "exhausted") {
        log.status = RunStatus::exhausted();
      } else if (st == "diverged") {
        log.status = RunStatus::diverged(std::stoul(field(line, "epoch")), parse_cause(field(line, "cause")));
      } else {
        throw Error("run log has an unrecognised status line: " + line);
      }
      have_status = true;
      continue;
    }
    if (have_status) throw Error("run log has rows after its status line");
    EpochRecord r;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf%c", &r.epoch, &r.train_loss, &r.val_loss, &r.elapsed_s, &tail) !=
        4)
      throw Error("malformed run log row: " + line);
    log.records.push_back(r);
  }
  if (!have_status) throw Error("run log has no status line");
  return log;
}

RunLog read_runlog_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open run log " + path);
  return read_runlog_csv(in);
}

// ---------------------------------------------------------------------------
// Trainer

struct DataParallelTrainer::Worker {
  ModelWeights weights;
  AdamState adam;
};

struct DataParallelTrainer::Gate {
  explicit Gate(std::ptrdiff_t n) : sem(n) {}
  std::counting_semaphore<4096> sem;
};

namespace {

std::size_t thread_cap(std::size_t configured) {
  if (configured > 0) return configured;
  if (const char* env = std::getenv("SCALELAB_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 4096;
}

// Extra slots appended to every shard sum: loss, then counts of NaN, Inf and
// PD failures among the shard's examples.
constexpr std::size_t kLossSlot = 0, kNaNSlot = 1, kInfSlot = 2, kPDSlot = 3, kExtra = 4;

template <typename Fn>
void run_workers(int n, Fn&& body) {
  if (n == 1) {
    body(0);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> threads;
  threads.reserve(n);
  for (int r = 0; r < n; ++r)
    threads.emplace_back([&, r] {
      try {
        body(r);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    });
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

DataParallelTrainer::DataParallelTrainer(TrainConfig config, const Dataset& train, const Dataset& validation)
    : config_(std::move(config)), train_(train), validation_(validation) {
  config_.validate();
  if (train_.size() == 0) throw Error("training set is empty");
  if (validation_.size() == 0) throw Error("validation set is empty");
  const auto shape = config_.model.input_shape();
  if (train_.examples.front().shape() != shape || validation_.examples.front().shape() != shape)
    throw Error("dataset voxel shape does not match the model grid");
  batch_ = scalelab::effective_batch(config_.scaling, config_.base_batch, config_.workers);
  steps_per_epoch_ = train_.size() / batch_;
  if (steps_per_epoch_ == 0)
    throw Error("training set of " + std::to_string(train_.size()) + " is smaller than one batch of " +
                std::to_string(batch_));

  schedule_.mode = config_.schedule;
  schedule_.base_lr = config_.base_lr;
  schedule_.k = config_.schedule == ScheduleMode::Constant ? 1u : static_cast<unsigned>(config_.workers);
  schedule_.warmup_epochs = config_.warmup_epochs;
  schedule_.steps_per_epoch = steps_per_epoch_;
  schedule_.validate();

  const ModelWeights init = init_weights(config_.model, config_.seed);
  for (int r = 0; r < config_.workers; ++r) workers_.push_back(Worker{init, AdamState(init.parameter_count())});

  if (config_.transport == Transport::Socket && config_.workers > 1)
    ring_ = make_local_ring(config_.workers);
  else
    group_ = std::make_unique<InMemoryGroup>(config_.workers);
  gate_ = std::make_unique<Gate>(static_cast<std::ptrdiff_t>(thread_cap(config_.max_threads)));
}

DataParallelTrainer::~DataParallelTrainer() = default;

Communicator& DataParallelTrainer::comm(int rank) {
  if (group_) return group_->member(rank);
  return *ring_[rank];
}

const ModelWeights& DataParallelTrainer::replica(int rank) const { return workers_.at(rank).weights; }

std::vector<std::uint64_t> DataParallelTrainer::replica_hashes() const {
  std::vector<std::uint64_t> h;
  for (const auto& w : workers_) h.push_back(w.weights.hash());
  return h;
}

std::vector<std::size_t> DataParallelTrainer::epoch_order(std::size_t epoch) const {
  Rng rng = Rng(config_.seed, streams::kShuffle).substream(epoch);
  return permutation(train_.size(), rng);
}

StepResult DataParallelTrainer::train_step(std::span<const std::size_t> global_batch, std::size_t global_step) {
  const auto shards = partition_batch(global_batch, config_.workers);
  const std::size_t params = workers_.front().weights.parameter_count();
  const double shard_size = static_cast<double>(shards.front().size());
  const double lr = lr_at(schedule_, global_step);
  std::vector<StepResult> results(config_.workers);

  run_workers(config_.workers, [&](int r) {
    Worker& w = workers_[r];
    TreeAccumulator acc(params + kExtra);
    {
      gate_->sem.acquire();
      std::vector<double> row;
      for (std::size_t ex : shards[r]) {
        std::fill(row.begin(), row.end(), 0.0);
        try {
          auto b = backward(train_.examples[ex], w.weights, config_.model);
          if (hook_) hook_(ex, b.gradient);
          row = b.gradient.flatten();
          row.resize(params + kExtra, 0.0);
          row[params + kLossSlot] = b.loss;
          bool nan = std::isnan(b.loss), inf = std::isinf(b.loss);
          for (std::size_t i = 0; i < params; ++i) {
            nan = nan || std::isnan(row[i]);
            inf = inf || std::isinf(row[i]);
          }
          if (nan) row[params + kNaNSlot] = 1.0;
          if (inf) row[params + kInfSlot] = 1.0;
          if (nan || inf) std::fill(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(params + 1), 0.0);
        } catch (const Diverged& d) {
          row.assign(params + kExtra, 0.0);
          const std::size_t slot = d.cause() == DivergenceCause::NaN   ? kNaNSlot
                                   : d.cause() == DivergenceCause::Inf ? kInfSlot
                                                                       : kPDSlot;
          row[params + slot] = 1.0;
        }
        acc.add(row);
      }
      gate_->sem.release();
    }

    // Mean over workers of the shard sums; dividing by the shard size gives
    // sum / |global batch| as in the sequential update.
    const Tensor reduced = comm(r).allreduce_mean(Tensor({params + kExtra}, acc.result()));
    StepResult& res = results[r];
    res.lr = lr;
    res.loss = reduced[params + kLossSlot] / shard_size;
    if (reduced[params + kPDSlot] > 0.0) {
      res.diverged = true;
      res.cause = DivergenceCause::PDFailure;
    } else if (reduced[params + kNaNSlot] > 0.0) {
      res.diverged = true;
      res.cause = DivergenceCause::NaN;
    } else if (reduced[params + kInfSlot] > 0.0) {
      res.diverged = true;
      res.cause = DivergenceCause::Inf;
    }
    if (res.diverged) return;

    ModelWeights grad = w.weights.zeros_like();
    std::vector<double> mean(reduced.values().begin(), reduced.values().begin() + static_cast<std::ptrdiff_t>(params));
    for (double& v : mean) v = v / shard_size;
    grad.assign_flat(mean);
    try {
      if (config_.optimizer == OptimizerKind::Adam)
        adam_step(w.weights, grad, lr, w.adam);
      else
        sgd_step(w.weights, grad, lr);
    } catch (const Diverged& d) {
      res.diverged = true;
      res.cause = d.cause();
    }
  });
  return results.front();
}

double DataParallelTrainer::validation_loss() {
  const std::size_t count = validation_.size();
  std::vector<double> losses(count, 0.0);
  const auto n = static_cast<std::size_t>(config_.workers);
  run_workers(config_.workers, [&](int r) {
    const std::size_t begin = count * static_cast<std::size_t>(r) / n;
    const std::size_t end = count * static_cast<std::size_t>(r + 1) / n;
    gate_->sem.acquire();
    try {
      for (std::size_t i = begin; i < end; ++i)
        losses[i] = forward(validation_.examples[i], workers_[r].weights, config_.model).loss;
    } catch (...) {
      gate_->sem.release();
      throw;
    }
    gate_->sem.release();
  });
  const double mean = tree_sum(losses) / static_cast<double>(count);
  if (std::isnan(mean)) throw Diverged(DivergenceCause::NaN, "validation loss is NaN");
  if (std::isinf(mean)) throw Diverged(DivergenceCause::Inf, "validation loss is infinite");
  return mean;
}

RunLog DataParallelTrainer::train(const EpochCallback& on_epoch) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  RunLog log;
  std::size_t global_step = 0;
  for (std::size_t epoch = 1; epoch <= config_.max_epochs; ++epoch) {
    const auto order = epoch_order(epoch);
    std::vector<double> step_losses;
    step_losses.reserve(steps_per_epoch_);
    for (std::size_t s = 0; s < steps_per_epoch_; ++s) {
      const std::span<const std::size_t> batch(order.data() + s * batch_, batch_);
      const StepResult res = train_step(batch, global_step++);
      if (res.diverged) {
        log.status = RunStatus::diverged(epoch, res.cause);
        return log;
      }
      step_losses.push_back(res.loss);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = tree_sum(step_losses) / static_cast<double>(step_losses.size());
    try {
      rec.val_loss = validation_loss();
    } catch (const Diverged& d) {
      log.status = RunStatus::diverged(epoch, d.cause());
      return log;
    }
    if (!std::isfinite(rec.train_loss)) {
      log.status = RunStatus::diverged(epoch, std::isnan(rec.train_loss) ? DivergenceCause::NaN : DivergenceCause::Inf);
      return log;
    }
    rec.elapsed_s = std::chrono::duration<double>(clock::now() - start).count();
    log.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_loss <= config_.target_loss) {
      log.status = RunStatus::reached(epoch, rec.elapsed_s);
      return log;
    }
  }
  log.status = RunStatus::exhausted();
  return log;
}

RunLog train(const TrainConfig& config, const Dataset& train, const Dataset& validation, const EpochCallback& on_epoch) {
  DataParallelTrainer trainer(config, train, validation);
  return trainer.train(on_epoch);
}

}  // namespace scalelab
