#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "scalelab/trainer.hpp"

using namespace scalelab;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.n = 2;
  m.K = 3;
  m.side = 8;
  m.latent = 16;
  m.encoder = {{3, 4}};
  return m;
}

const Split& tiny_data() {
  static const Split s = [] {
    GeneratorOptions g;
    g.count = 160;
    g.seed = 5;
    g.grid.n = 2;
    g.grid.side = 8;
    return split(generate(g), 32, 5);
  }();
  return s;
}

TrainConfig tiny_config(int workers, ScalingMode mode = ScalingMode::Strong) {
  TrainConfig c;
  c.model = tiny_model();
  c.workers = workers;
  c.scaling = mode;
  c.base_batch = 16;
  c.seed = 2;
  c.max_epochs = 2;
  c.target_loss = 0.0;
  return c;
}

}  // namespace

TEST(Batching, EffectiveBatch) {
  EXPECT_EQ(effective_batch(ScalingMode::Strong, 32, 8), 32u);
  EXPECT_EQ(effective_batch(ScalingMode::Weak, 32, 2), 64u);
  EXPECT_EQ(effective_batch(ScalingMode::Weak, 32, 1), 32u);
  EXPECT_EQ(effective_batch(ScalingMode::Strong, 32, 1), 32u);
}

TEST(Batching, PartitionIsContiguous) {
  std::vector<std::size_t> ids(32);
  for (std::size_t i = 0; i < 32; ++i) ids[i] = 100 + i;
  const auto shards = partition_batch(ids, 4);
  ASSERT_EQ(shards.size(), 4u);
  std::vector<std::size_t> joined;
  for (const auto& s : shards) {
    EXPECT_EQ(s.size(), 8u);
    joined.insert(joined.end(), s.begin(), s.end());
  }
  EXPECT_EQ(joined, ids);
  EXPECT_EQ(partition_batch(ids, 1).front(), ids);
  EXPECT_THROW(partition_batch(ids, 5), Error);
}

TEST(Config, StrongModeNeedsPowerOfTwoDividingBatch) {
  auto c = tiny_config(3);
  EXPECT_THROW(c.validate(), Error);
  c.workers = 32;
  EXPECT_THROW(c.validate(), Error);  // does not divide 16
  c.workers = 8;
  EXPECT_NO_THROW(c.validate());
  c.scaling = ScalingMode::Weak;
  c.workers = 3;
  EXPECT_NO_THROW(c.validate());
}

TEST(Trainer, StepCountsPerEpoch) {
  const auto& d = tiny_data();
  DataParallelTrainer strong(tiny_config(2), d.train, d.validation);
  EXPECT_EQ(strong.steps_per_epoch(), 128u / 16u);
  DataParallelTrainer weak(tiny_config(3, ScalingMode::Weak), d.train, d.validation);
  EXPECT_EQ(weak.effective_batch(), 48u);
  EXPECT_EQ(weak.steps_per_epoch(), 2u);
}

TEST(Trainer, EpochOrderIndependentOfWorkerCount) {
  const auto& d = tiny_data();
  DataParallelTrainer a(tiny_config(1), d.train, d.validation), b(tiny_config(4), d.train, d.validation);
  EXPECT_EQ(a.epoch_order(3), b.epoch_order(3));
  EXPECT_NE(a.epoch_order(3), a.epoch_order(4));
}

TEST(Trainer, StrongScalingIsBitwiseSequentialForTwentySteps) {
  const auto& d = tiny_data();
  std::vector<std::unique_ptr<DataParallelTrainer>> ts;
  for (int n : {1, 2, 4}) ts.push_back(std::make_unique<DataParallelTrainer>(tiny_config(n), d.train, d.validation));
  std::size_t step = 0;
  for (std::size_t epoch = 1; step < 20; ++epoch) {
    const auto order = ts[0]->epoch_order(epoch);
    for (std::size_t s = 0; s < ts[0]->steps_per_epoch() && step < 20; ++s, ++step) {
      const std::span<const std::size_t> batch(order.data() + s * 16, 16);
      std::vector<StepResult> r;
      for (auto& t : ts) r.push_back(t->train_step(batch, step));
      for (std::size_t i = 1; i < ts.size(); ++i) {
        ASSERT_FALSE(r[i].diverged);
        ASSERT_EQ(r[i].loss, r[0].loss) << "step " << step;
        for (int rank = 0; rank < ts[i]->workers(); ++rank)
          ASSERT_TRUE(ts[i]->replica(rank).identical(ts[0]->replica(0))) << "step " << step << " N index " << i;
      }
    }
  }
}

TEST(Trainer, SingleWorkerStepIsTheSequentialUpdate) {
  const auto& d = tiny_data();
  auto c = tiny_config(1);
  c.optimizer = OptimizerKind::SGD;
  DataParallelTrainer t(c, d.train, d.validation);
  const auto order = t.epoch_order(1);
  const std::span<const std::size_t> batch(order.data(), 16);
  std::vector<Tensor> xs;
  for (auto i : batch) xs.push_back(d.train.examples[i]);
  ModelWeights w = init_weights(c.model, c.seed);
  const auto g = batch_backward(xs, w, c.model);
  sgd_step(w, g.gradient, c.base_lr);
  const auto r = t.train_step(batch, 0);
  EXPECT_EQ(r.loss, g.loss);
  EXPECT_TRUE(t.replica(0).identical(w));
}

TEST(Trainer, ReplicasStayCoherentInWeakMode) {
  const auto& d = tiny_data();
  auto c = tiny_config(3, ScalingMode::Weak);
  c.schedule = ScheduleMode::LinearRuleWithWarmup;
  DataParallelTrainer t(c, d.train, d.validation);
  const auto order = t.epoch_order(1);
  for (std::size_t s = 0; s < t.steps_per_epoch(); ++s) {
    t.train_step(std::span<const std::size_t>(order.data() + s * 48, 48), s);
    const auto h = t.replica_hashes();
    for (auto x : h) EXPECT_EQ(x, h.front());
  }
}

TEST(Trainer, InjectedInfDiverges) {
  const auto& d = tiny_data();
  DataParallelTrainer t(tiny_config(2), d.train, d.validation);
  const auto order = t.epoch_order(1);
  const std::size_t victim = order[11];
  t.set_gradient_hook([&](std::size_t ex, ModelWeights& g) {
    if (ex == victim) g.project.weight[0] = std::numeric_limits<double>::infinity();
  });
  const auto before = t.replica(0).hash();
  const auto r = t.train_step(std::span<const std::size_t>(order.data(), 16), 0);
  EXPECT_TRUE(r.diverged);
  EXPECT_EQ(r.cause, DivergenceCause::Inf);
  EXPECT_EQ(t.replica(0).hash(), before);
  EXPECT_EQ(t.replica(1).hash(), before);
}

TEST(Trainer, InjectedNaNDivergesTheRun) {
  const auto& d = tiny_data();
  DataParallelTrainer t(tiny_config(2), d.train, d.validation);
  t.set_gradient_hook([](std::size_t, ModelWeights& g) { g.alpha_head.bias[0] = std::nan(""); });
  const RunLog log = t.train();
  EXPECT_EQ(log.status.state, RunState::Diverged);
  EXPECT_EQ(log.status.cause, DivergenceCause::NaN);
  EXPECT_EQ(log.status.epoch, 1u);
  EXPECT_TRUE(log.records.empty());
}

TEST(Trainer, ReachedAtEpochOneWhenTargetIsLoose) {
  const auto& d = tiny_data();
  auto c = tiny_config(1);
  c.target_loss = 1.0;
  const RunLog log = train(c, d.train, d.validation);
  EXPECT_EQ(log.status.state, RunState::Reached);
  EXPECT_EQ(log.status.epoch, 1u);
  ASSERT_EQ(log.records.size(), 1u);
  EXPECT_EQ(log.status.elapsed_s, log.records[0].elapsed_s);
}

TEST(Trainer, ExhaustedAfterTheEpochCap) {
  const auto& d = tiny_data();
  auto c = tiny_config(1);
  c.max_epochs = 1;
  const RunLog log = train(c, d.train, d.validation);
  EXPECT_EQ(log.status.state, RunState::Exhausted);
  EXPECT_EQ(log.records.size(), 1u);
}

TEST(Trainer, LargeSgdRateDivergesAndStaysDiverged) {
  // Bounded heads keep the loss finite; in 3-D the failure shows up as a
  // correlation matrix that jitter cannot repair.
  GeneratorOptions g;
  g.count = 160;
  g.seed = 5;
  g.grid.n = 3;
  g.grid.side = 8;
  const Split d = split(generate(g), 32, 5);
  auto c = tiny_config(1);
  c.model.n = 3;
  c.optimizer = OptimizerKind::SGD;
  c.base_lr = 10.0;
  c.max_epochs = 5;
  const RunLog log = train(c, d.train, d.validation);
  EXPECT_EQ(log.status.state, RunState::Diverged);
  EXPECT_EQ(log.status.cause, DivergenceCause::PDFailure);
  EXPECT_EQ(log.records.size() + 1, log.status.epoch);
}

TEST(Trainer, ElapsedTimeIsMonotone) {
  const auto& d = tiny_data();
  const RunLog log = train(tiny_config(2), d.train, d.validation);
  ASSERT_EQ(log.records.size(), 2u);
  EXPECT_LE(log.records[0].elapsed_s, log.records[1].elapsed_s);
  EXPECT_EQ(log.records[1].epoch, 2u);
}

TEST(Trainer, ThreadCapDoesNotChangeResults) {
  const auto& d = tiny_data();
  auto capped = tiny_config(4);
  capped.max_threads = 1;
  capped.max_epochs = 1;
  auto free = capped;
  free.max_threads = 0;
  const auto a = train(capped, d.train, d.validation), b = train(free, d.train, d.validation);
  EXPECT_EQ(a.records[0].train_loss, b.records[0].train_loss);
  EXPECT_EQ(a.records[0].val_loss, b.records[0].val_loss);
}

TEST(Trainer, SocketTransportTracksInMemoryClosely) {
  const auto& d = tiny_data();
  auto mem = tiny_config(2);
  mem.max_epochs = 1;
  auto sock = mem;
  sock.transport = Transport::Socket;
  const auto a = train(mem, d.train, d.validation), b = train(sock, d.train, d.validation);
  ASSERT_EQ(b.records.size(), 1u);
  EXPECT_NEAR(b.records[0].val_loss, a.records[0].val_loss, 1e-9 * a.records[0].val_loss);
}

TEST(Trainer, RejectsEmptyOrTooSmallTrainingSets) {
  const auto& d = tiny_data();
  Dataset empty;
  empty.n = 2;
  empty.side = 8;
  EXPECT_THROW(DataParallelTrainer(tiny_config(1), empty, d.validation), Error);
  auto c = tiny_config(4, ScalingMode::Weak);
  c.base_batch = 64;
  EXPECT_THROW(DataParallelTrainer(c, d.train, d.validation), Error);
}

TEST(RunLogCsv, RoundTripsEveryStatus) {
  RunLog log;
  log.records = {{1, 0.01, 0.002, 10.0}, {2, 0.005, 0.0012, 21.5}};
  for (const RunStatus& st :
       {RunStatus::reached(2, 21.5), RunStatus::exhausted(), RunStatus::diverged(3, DivergenceCause::PDFailure)}) {
    log.status = st;
    std::stringstream ss;
    write_runlog_csv(log, ss);
    const auto back = read_runlog_csv(ss);
    ASSERT_EQ(back.records.size(), 2u);
    EXPECT_EQ(back.records[1].val_loss, 0.0012);
    EXPECT_EQ(back.records[1].elapsed_s, 21.5);
    EXPECT_EQ(back.status.state, st.state);
    EXPECT_EQ(back.status.epoch, st.epoch);
    EXPECT_EQ(back.status.cause, st.cause);
  }
}

TEST(RunLogCsv, Format) {
  RunLog log;
  log.records = {{1, 0.5, 0.25, 1.0}};
  log.status = RunStatus::diverged(2, DivergenceCause::NaN);
  std::stringstream ss;
  write_runlog_csv(log, ss);
  EXPECT_EQ(ss.str(), "epoch,train_loss,val_loss,elapsed_s\n1,0.5,0.25,1\n# status=diverged epoch=2 cause=NaN\n");
}

TEST(RunLogCsv, MalformedInputIsRejected) {
  for (const char* text : {"", "wrong,header\n# status=exhausted\n", "epoch,train_loss,val_loss,elapsed_s\n1,2,3\n",
                           "epoch,train_loss,val_loss,elapsed_s\n1,0.1,0.1,1\n",
                           "epoch,train_loss,val_loss,elapsed_s\n# status=bogus\n"}) {
    std::stringstream ss(text);
    EXPECT_THROW(read_runlog_csv(ss), Error) << text;
  }
}
