#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scalelab/collectives.hpp"
#include "scalelab/data.hpp"
#include "scalelab/model.hpp"
#include "scalelab/optim.hpp"

namespace scalelab {

enum class ScalingMode { Strong, Weak };
enum class OptimizerKind { Adam, SGD };

std::string_view to_string(ScalingMode mode);
ScalingMode parse_scaling_mode(std::string_view text);
std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

inline constexpr double kReferenceTargetLoss = 0.0016384;
inline constexpr double kReferenceBaseLr = 0.00105;

struct TrainConfig {
  ScalingMode scaling = ScalingMode::Strong;
  ScheduleMode schedule = ScheduleMode::Constant;
  int workers = 1;
  std::size_t base_batch = 32;
  double base_lr = kReferenceBaseLr;
  std::uint64_t seed = 0;
  double target_loss = kReferenceTargetLoss;
  std::size_t max_epochs = 400;
  double warmup_epochs = 5.0;
  ModelConfig model = ModelConfig::desk();
  OptimizerKind optimizer = OptimizerKind::Adam;
  Transport transport = Transport::InMemory;
  /// Upper bound on workers computing at once; 0 reads SCALELAB_THREADS, unset = no cap.
  std::size_t max_threads = 0;

  /// Strong scaling requires N to be a power of two dividing the batch.
  void validate() const;
};

/// Strong: b. Weak: b * N.
std::size_t effective_batch(ScalingMode mode, std::size_t base_batch, int workers);

/// Contiguous equal shards; shard i = [i*m, (i+1)*m).
std::vector<std::vector<std::size_t>> partition_batch(std::span<const std::size_t> batch, int workers);

enum class RunState { Reached, Exhausted, Diverged };

struct RunStatus {
  RunState state = RunState::Exhausted;
  std::size_t epoch = 0;     // Reached / Diverged
  double elapsed_s = 0.0;    // Reached
  DivergenceCause cause = DivergenceCause::NaN;  // Diverged

  static RunStatus reached(std::size_t epoch, double elapsed) { return {RunState::Reached, epoch, elapsed, {}}; }
  static RunStatus exhausted() { return {}; }
  static RunStatus diverged(std::size_t epoch, DivergenceCause cause) { return {RunState::Diverged, epoch, 0.0, cause}; }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double elapsed_s = 0.0;
};

struct RunLog {
  std::vector<EpochRecord> records;
  RunStatus status;
};

/// Header `epoch,train_loss,val_loss,elapsed_s`, one row per epoch, then a
/// `# status=...` line. Values are written with 17 significant digits.
void write_runlog_csv(const RunLog& log, std::ostream& out);
void write_runlog_csv(const RunLog& log, const std::string& path);
RunLog read_runlog_csv(std::istream& in);
RunLog read_runlog_csv(const std::string& path);
std::string format_status(const RunStatus& status);

struct StepResult {
  double loss = 0.0;
  double lr = 0.0;
  bool diverged = false;
  DivergenceCause cause = DivergenceCause::NaN;
};

/// Called with (example id, gradient) after each per-example backward pass.
using GradientHook = std::function<void(std::size_t, ModelWeights&)>;
using EpochCallback = std::function<void(const EpochRecord&)>;

/// N replicas trained in lockstep. Each step every worker sums the gradients
/// of its shard with tree_sum, the shard sums are averaged by allreduce_mean,
/// and every replica applies the same update.
class DataParallelTrainer {
 public:
  DataParallelTrainer(TrainConfig config, const Dataset& train, const Dataset& validation);
  ~DataParallelTrainer();

  const TrainConfig& config() const noexcept { return config_; }
  const Schedule& schedule() const noexcept { return schedule_; }
  std::size_t effective_batch() const noexcept { return batch_; }
  std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }

  /// Order of training examples for an epoch; depends on (seed, epoch) only.
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;

  StepResult train_step(std::span<const std::size_t> global_batch, std::size_t global_step);

  /// Mean validation loss; throws Diverged.
  double validation_loss();

  RunLog train(const EpochCallback& on_epoch = {});

  int workers() const noexcept { return config_.workers; }
  const ModelWeights& replica(int rank) const;
  std::vector<std::uint64_t> replica_hashes() const;

  void set_gradient_hook(GradientHook hook) { hook_ = std::move(hook); }

 private:
  struct Worker;
  struct Gate;

  TrainConfig config_;
  const Dataset& train_;
  const Dataset& validation_;
  Schedule schedule_;
  std::size_t batch_ = 0;
  std::size_t steps_per_epoch_ = 0;
  std::vector<Worker> workers_;
  std::unique_ptr<InMemoryGroup> group_;
  std::vector<std::unique_ptr<SocketCommunicator>> ring_;
  std::unique_ptr<Gate> gate_;
  GradientHook hook_;

  Communicator& comm(int rank);
};

RunLog train(const TrainConfig& config, const Dataset& train, const Dataset& validation,
             const EpochCallback& on_epoch = {});

}  // namespace scalelab
