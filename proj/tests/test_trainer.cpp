#include <gtest/gtest.h>

#include <limits>

#include "ltcil/trainer.hpp"
#include "oracles.hpp"

using namespace ltcil;

namespace {

TaskStream small_stream(std::size_t N = 3, std::uint64_t seed = 1, Scenario sc = Scenario::FromScratch) {
  SyntheticSpec spec;
  spec.num_classes = 6;
  spec.input_dim = 5;
  spec.test_per_class = 5;
  spec.seed = seed;
  return split_tasks(generate_dataset(spec, build_profile(6, 40, 10.0)), N, Protocol::Shuffled, sc, seed);
}

TrainConfig small_config() {
  TrainConfig c;
  c.epochs_per_task = 4;
  c.lr_milestones = {2};
  c.batch_size = 8;
  c.hidden_dims = {8};
  c.seed = 3;
  return c;
}

/// Task of column-labelled samples with classes [first, first + k).
TaskData column_task(const Task& t, std::size_t first, std::size_t index) {
  TaskData td{index, {}, t.train};
  std::map<std::size_t, std::size_t> col;
  for (std::size_t i = 0; i < t.classes.size(); ++i) {
    col[t.classes[i]] = first + i;
    td.classes.push_back(first + i);
  }
  for (auto& y : td.train.labels) y = col.at(y);
  return td;
}

}  // namespace

TEST(TrainConfig, StepDecay) {
  TrainConfig c;
  EXPECT_EQ(c.lr_at(0), 0.1);
  EXPECT_EQ(c.lr_at(14), 0.1);
  EXPECT_DOUBLE_EQ(c.lr_at(15), 0.01);
  EXPECT_DOUBLE_EQ(c.lr_at(22), 0.01);
  EXPECT_DOUBLE_EQ(c.lr_at(23), 0.001);
  EXPECT_DOUBLE_EQ(c.lr_at(29), 0.001);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.validate();
  c.lr_milestones = {23, 15};
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr_milestones = {30};
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.kd_temperature = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.base_lr = std::numeric_limits<double>::infinity();
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.gcr.beta = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Experiment, DeterministicForAFixedSeed) {
  const TaskStream s = small_stream();
  ExperimentResult a = run_experiment(s, small_config());
  ExperimentResult b = run_experiment(s, small_config());
  a.report.train_seconds = b.report.train_seconds = 0.0;
  EXPECT_EQ(a.report, b.report);
  EXPECT_EQ(a.model.parameters(), b.model.parameters());
  EXPECT_EQ(a.ema, b.ema);
  TrainConfig other = small_config();
  other.seed = 4;
  EXPECT_NE(run_experiment(s, other).model.parameters(), a.model.parameters());
}

TEST(Experiment, ShapesOfTheReport) {
  for (Scenario sc : {Scenario::FromScratch, Scenario::FromHalf}) {
    const TaskStream s = small_stream(3, 2, sc);
    const TrainConfig c = small_config();
    const ExperimentResult r = run_experiment(s, c);
    EXPECT_EQ(r.model.output_dim(), 6u);
    EXPECT_EQ(r.report.incremental_accuracy.size(), s.tasks.size());
    EXPECT_EQ(r.report.grad_trace.size(), s.tasks.size() * c.epochs_per_task);
    EXPECT_EQ(r.report.per_class_accuracy.size(), 6u);
    EXPECT_EQ(r.report.metadata.class_order, s.class_order());
    EXPECT_EQ(r.accumulator.k_total(), 6u);
    EXPECT_DOUBLE_EQ(r.report.incremental_accuracy.back(), r.report.overall_accuracy);
    EXPECT_EQ(task_boundaries(r.report.grad_trace).size(), s.tasks.size() - 1);
  }
}

TEST(Experiment, TraceFollowsScheduleAndEntropy) {
  const TaskStream s = small_stream(3, 5);
  const TrainConfig c = small_config();
  const ExperimentResult r = run_experiment(s, c);
  std::vector<double> counts;
  std::size_t last_task = SIZE_MAX;
  for (const auto& e : r.report.grad_trace) {
    if (e.task != last_task) {
      for (std::size_t y : s.tasks[e.task].classes) counts.push_back(static_cast<double>(s.class_train_counts[y]));
      last_task = e.task;
    }
    EXPECT_NEAR(e.h_norm, oracle::normalized_entropy(counts), 1e-12);
    EXPECT_EQ(e.lambda, lambda(c.schedule, {e.epoch, c.epochs_per_task, e.h_norm}));
    EXPECT_EQ(e.lr, c.lr_at(e.epoch));
    EXPECT_GT(e.grad_norm_mean_pre, 0.0);
    EXPECT_LE(e.grad_norm_min_pre, e.grad_norm_mean_pre);
    EXPECT_GE(e.grad_norm_max_pre, e.grad_norm_mean_pre);
    if (e.task == 0) {
      EXPECT_EQ(e.kd_loss, 0.0);
    }
  }
}

TEST(Experiment, PostEqualsPreWithoutGcr) {
  TrainConfig c = small_config();
  c.gcr.enabled = false;
  for (const auto& e : run_experiment(small_stream(), c).report.grad_trace) {
    EXPECT_EQ(e.grad_norm_mean_post, e.grad_norm_mean_pre);
    EXPECT_EQ(e.grad_norm_max_post, e.grad_norm_max_pre);
  }
}

TEST(Experiment, SingleTaskStreamHasNoDistillation) {
  const ExperimentResult r = run_experiment(small_stream(1), small_config());
  for (const auto& e : r.report.grad_trace) EXPECT_EQ(e.kd_loss, 0.0);
  EXPECT_EQ(r.report.incremental_accuracy.size(), 1u);
}

TEST(TrainTask, ZeroLambdaIgnoresTheTeacher) {
  const TaskStream s = small_stream(2, 7);
  TrainConfig c = small_config();
  c.schedule = ScheduleKind{ScheduleType::Fixed, 0.0};
  const std::size_t k0 = s.tasks[0].classes.size(), k1 = s.tasks[1].classes.size();
  const MlpModel start = MlpModel::make(5, c.hidden_dims, k0 + k1, 11);
  const TeacherSnapshot t1(MlpModel::make(5, c.hidden_dims, k0, 12));
  const TeacherSnapshot t2(MlpModel::make(5, c.hidden_dims, k0, 13));
  const TaskData td = column_task(s.tasks[1], k0, 1);

  auto train_with = [&](const TeacherSnapshot* teacher, double fixed) {
    TrainConfig cc = c;
    cc.schedule.fixed_lambda = fixed;
    MlpModel m = start;
    ClassDistAccumulator acc;
    acc.update({{0, 10}});
    GcrProcessor gcr(cc.gcr);
    Rng rng(5);
    const TaskLog log = train_task(m, teacher, td, cc, acc, gcr, rng);
    return std::make_pair(m.parameters(), log);
  };
  const auto [p1, l1] = train_with(&t1, 0.0);
  const auto [p2, l2] = train_with(&t2, 0.0);
  const auto [p3, l3] = train_with(nullptr, 0.0);
  EXPECT_EQ(p1, p2);
  EXPECT_EQ(p1, p3);
  for (const auto& e : l1.epochs) EXPECT_EQ(e.kd_loss, 0.0);
  const auto [p4, l4] = train_with(&t1, 1.0);
  EXPECT_NE(p1, p4);
  EXPECT_GT(l4.epochs.front().kd_loss, 0.0);
}

TEST(TrainTask, NonFiniteInputAbortsWithDiagnostic) {
  const TaskStream s = small_stream(1);
  TaskData td = column_task(s.tasks[0], 0, 0);
  td.train.inputs(3, 1) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig c = small_config();
  MlpModel m = MlpModel::make(5, c.hidden_dims, td.classes.size(), 1);
  ClassDistAccumulator acc;
  GcrProcessor gcr(c.gcr);
  Rng rng(1);
  try {
    train_task(m, nullptr, td, c, acc, gcr, rng);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    const auto diag = nlohmann::json::parse(e.diagnostic());
    for (const char* key : {"task", "epoch", "batch", "lambda", "lr", "ce_loss", "grad_norm", "ledger", "ema"}) {
      EXPECT_TRUE(diag.contains(key)) << key;
    }
    EXPECT_EQ(diag["epoch"], 0);
  }
}

TEST(TrainTask, RejectsInconsistentInputs) {
  const TaskStream s = small_stream(2);
  const TrainConfig c = small_config();
  const std::size_t k0 = s.tasks[0].classes.size();
  const TaskData td0 = column_task(s.tasks[0], 0, 0);
  MlpModel m = MlpModel::make(5, c.hidden_dims, k0, 1);
  GcrProcessor gcr(c.gcr);
  Rng rng(1);

  ClassDistAccumulator acc;
  acc.update({{0, 3}});
  EXPECT_THROW(train_task(m, nullptr, td0, c, acc, gcr, rng), InvalidInput);

  ClassDistAccumulator fresh;
  const TaskData td1 = column_task(s.tasks[1], k0, 1);
  EXPECT_THROW(train_task(m, nullptr, td1, c, fresh, gcr, rng), InvalidInput);

  const TeacherSnapshot empty(MlpModel::make(5, c.hidden_dims, k0, 2), 0);
  EXPECT_THROW(train_task(m, &empty, td0, c, fresh, gcr, rng), ConfigError);
  EXPECT_THROW(TeacherSnapshot(MlpModel::make(5, c.hidden_dims, 2, 2), 3), InvalidInput);
}

TEST(Overhead, BaselineSwitchesOffTheMethod) {
  TrainConfig c;
  const TrainConfig b = baseline_of(c);
  EXPECT_FALSE(b.gcr.enabled);
  EXPECT_EQ(b.schedule.type, ScheduleType::Fixed);
  EXPECT_EQ(b.schedule.fixed_lambda, 1.0);
  EXPECT_EQ(b.reweighting_enabled, c.reweighting_enabled);
}
