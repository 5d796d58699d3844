#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltcil/data.hpp"
#include "ltcil/error.hpp"
#include "ltcil/gcr.hpp"
#include "ltcil/imbalance.hpp"
#include "ltcil/losses.hpp"
#include "ltcil/metrics.hpp"
#include "ltcil/nn.hpp"
#include "ltcil/schedule.hpp"

namespace ltcil {

struct TrainConfig {
  std::size_t epochs_per_task = 30;
  std::size_t batch_size = 32;
  double base_lr = 0.1;
  /// Epochs (within a task) at which the learning rate is multiplied by lr_decay.
  std::vector<std::size_t> lr_milestones{15, 23};
  double lr_decay = 0.1;
  ScheduleKind schedule{ScheduleType::EntropySigmoid, 1.0};
  GcrConfig gcr;
  double kd_temperature = 2.0;
  std::uint64_t seed = 0;
  bool reweighting_enabled = true;
  std::vector<std::size_t> hidden_dims{64, 64};

  void validate() const {
    if (epochs_per_task == 0) throw ConfigError("epochs_per_task must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be finite and >= 0");
    if (!(lr_decay > 0.0) || !std::isfinite(lr_decay)) throw ConfigError("lr_decay must be finite and > 0");
    for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
      if (lr_milestones[i] >= epochs_per_task) throw ConfigError("lr_milestones must be < epochs_per_task");
      if (i > 0 && lr_milestones[i] <= lr_milestones[i - 1]) {
        throw ConfigError("lr_milestones must be strictly increasing");
      }
    }
    if (schedule.type == ScheduleType::Fixed && (!(schedule.fixed_lambda >= 0.0) || !std::isfinite(schedule.fixed_lambda))) {
      throw ConfigError("fixed_lambda must be finite and >= 0");
    }
    gcr.validate();
    if (!(kd_temperature > 0.0) || !std::isfinite(kd_temperature)) throw ConfigError("kd_temperature must be > 0");
    for (std::size_t h : hidden_dims) {
      if (h == 0) throw ConfigError("hidden_dims entries must be positive");
    }
  }

  /// Step-decayed learning rate for a 0-based epoch within a task.
  double lr_at(std::size_t epoch) const {
    double lr = base_lr;
    for (std::size_t m : lr_milestones) {
      if (epoch >= m) lr *= lr_decay;
    }
    return lr;
  }
};

/// Frozen copy of the model at the end of the previous task.
class TeacherSnapshot {
 public:
  explicit TeacherSnapshot(MlpModel model) : model_(std::move(model)), old_class_count_(model_.output_dim()) {}

  TeacherSnapshot(MlpModel model, std::size_t old_class_count)
      : model_(std::move(model)), old_class_count_(old_class_count) {
    if (old_class_count_ > model_.output_dim()) throw InvalidInput("TeacherSnapshot: old_class_count exceeds head width");
  }

  const MlpModel& model() const noexcept { return model_; }
  std::size_t old_class_count() const noexcept { return old_class_count_; }

 private:
  MlpModel model_;
  std::size_t old_class_count_;
};

/// Training samples of one task, labelled by output column.
struct TaskData {
  std::size_t index = 0;
  std::vector<std::size_t> classes;
  LabeledSet train;
};

struct TaskLog {
  GradTrace epochs;
  std::size_t reweight_fallbacks = 0;
  GradNormLedger ledger;
};

/// Shuffled sample order for one epoch, drawn from the run's shuffle stream.
inline std::vector<std::size_t> epoch_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

namespace detail {

struct NormStats {
  double sum = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t n = 0;

  void add(double v) {
    min = n == 0 ? v : std::min(min, v);
    max = n == 0 ? v : std::max(max, v);
    sum += v;
    ++n;
  }
  double mean() const { return n == 0 ? 0.0 : sum / static_cast<double>(n); }
};

}  // namespace detail

/// Trains one task in place.
///
/// Per epoch: lambda is taken from the schedule at epoch start with H_norm of
/// the accumulated distribution (this task included); class weights come
/// from the gradient-norm ledger as it stood at the end of the previous
/// epoch. Per mini-batch: the logit gradient is dCE(weighted) + lambda * dKD
/// (KD only with a teacher and lambda != 0), back-propagated once, passed
/// through GCR when enabled and applied by plain SGD.
inline TaskLog train_task(MlpModel& model, const TeacherSnapshot* teacher, const TaskData& task,
                          const TrainConfig& cfg, ClassDistAccumulator& acc, GcrProcessor& gcr, Rng& shuffle_rng) {
  if (teacher != nullptr && teacher->old_class_count() == 0) {
    throw ConfigError("train_task: teacher snapshot has no old classes");
  }
  if (task.train.size() == 0) throw InvalidInput("train_task: task has no samples");
  std::map<std::size_t, std::int64_t> counts;
  for (std::size_t c : task.classes) {
    if (acc.contains(c)) throw InvalidInput("train_task: class " + std::to_string(c) + " was already trained");
    if (c >= model.output_dim()) throw InvalidInput("train_task: head does not cover class " + std::to_string(c));
    counts[c] = 0;
  }
  for (std::size_t y : task.train.labels) {
    if (!counts.contains(y)) throw InvalidInput("train_task: sample label outside the task's classes");
    ++counts[y];
  }

  acc.update(counts);
  const double h_norm = normalized_entropy(acc);

  TaskLog log;
  log.ledger.reset(task.classes);
  const std::size_t n = task.train.size();
  const std::size_t T = cfg.epochs_per_task;

  for (std::size_t epoch = 0; epoch < T; ++epoch) {
    const double lam = lambda(cfg.schedule, {epoch, T, h_norm});
    const bool use_kd = teacher != nullptr && lam != 0.0;
    const double lr = cfg.lr_at(epoch);

    std::map<std::size_t, double> class_weight;
    if (cfg.reweighting_enabled) {
      Reweighting rw = reweight(log.ledger);
      if (rw.fallback) ++log.reweight_fallbacks;
      class_weight = std::move(rw.weights);
    }

    detail::NormStats pre, post;
    double ce_sum = 0.0, kd_sum = 0.0;
    std::size_t batches = 0;
    const auto order = epoch_order(n, shuffle_rng);

    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batches) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      std::span<const std::size_t> rows(order.data() + start, len);
      const DenseMatrix x = task.train.inputs.gather_rows(rows);
      std::vector<std::size_t> labels(len);
      std::vector<double> weights(len, 1.0);
      for (std::size_t i = 0; i < len; ++i) {
        labels[i] = task.train.labels[rows[i]];
        if (cfg.reweighting_enabled) weights[i] = class_weight.at(labels[i]);
      }

      const ForwardTrace fwd = forward_trace(model, x);
      LossAndGrad ce = ce_loss_and_grad(fwd.logits(), labels, weights);
      const std::vector<double> sample_norms = per_sample_ce_grad_norms(fwd.logits(), labels);

      DenseMatrix dlogits = std::move(ce.dlogits);
      double kd_loss = 0.0;
      if (use_kd) {
        const DenseMatrix t_logits = forward(teacher->model(), x);
        LossAndGrad kd = kd_loss_and_grad(fwd.logits(), t_logits, cfg.kd_temperature, teacher->old_class_count());
        kd_loss = kd.loss;
        auto& d = dlogits.values();
        const auto& k = kd.dlogits.values();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += lam * k[i];
      }

      const FlatGradient g = backward(model, fwd, dlogits);
      const double g_norm = g.norm();
      if (!std::isfinite(ce.loss) || !std::isfinite(kd_loss) || !std::isfinite(g_norm)) {
        nlohmann::json diag = {{"task", task.index},   {"epoch", epoch},     {"batch", batches},
                               {"lambda", lam},        {"lr", lr},           {"h_norm", h_norm},
                               {"ce_loss", ce.loss},   {"kd_loss", kd_loss}, {"grad_norm", g_norm},
                               {"gradient_finite", g.all_finite()},
                               {"parameters_finite", FlatGradient{model.parameters()}.all_finite()},
                               {"ledger", log.ledger}, {"ema", gcr.state()}};
        throw NumericalError("non-finite loss or gradient in task " + std::to_string(task.index) + ", epoch " +
                                 std::to_string(epoch),
                             diag.dump(2));
      }
      log.ledger.accumulate(labels, sample_norms);
      pre.add(g_norm);
      if (cfg.gcr.enabled) {
        const FlatGradient g_reg = gcr.process(g);
        post.add(g_reg.norm());
        sgd_step(model, g_reg, lr);
      } else {
        post.add(g_norm);
        sgd_step(model, g, lr);
      }
      ce_sum += ce.loss;
      kd_sum += kd_loss;
    }
    if (cfg.gcr.enabled) gcr.end_epoch();

    const double nb = static_cast<double>(batches);
    log.epochs.push_back({task.index, epoch, lam, h_norm, lr, ce_sum / nb, kd_sum / nb, pre.mean(), pre.min, pre.max,
                          post.mean(), post.min, post.max});
  }
  return log;
}

struct ExperimentResult {
  MetricsReport report;
  MlpModel model;
  ClassDistAccumulator accumulator;
  EmaState ema;
  GradNormLedger ledger;
};

/// Runs every task of the stream in order and evaluates on the balanced test
/// set. Output column j of the final model stands for class
/// report.metadata.class_order[j].
inline ExperimentResult run_experiment(const TaskStream& stream, const TrainConfig& cfg,
                                       const GroupThresholds& thresholds = {}, const std::string& config_hash = "") {
  cfg.validate();
  thresholds.validate();
  if (stream.tasks.empty()) throw InvalidInput("run_experiment: empty stream");

  const std::vector<std::size_t> class_order = stream.class_order();
  std::map<std::size_t, std::size_t> column_of;
  for (std::size_t j = 0; j < class_order.size(); ++j) column_of[class_order[j]] = j;

  std::vector<TaskData> tasks;
  std::size_t col = 0;
  for (std::size_t i = 0; i < stream.tasks.size(); ++i) {
    const Task& t = stream.tasks[i];
    TaskData td{i, {}, t.train};
    for (std::size_t c = 0; c < t.classes.size(); ++c) td.classes.push_back(col++);
    for (auto& y : td.train.labels) y = column_of.at(y);
    tasks.push_back(std::move(td));
  }

  const std::size_t input_dim = stream.test.inputs.cols();
  MlpModel model = MlpModel::make(input_dim, cfg.hidden_dims, tasks.front().classes.size(), derive_seed(cfg.seed, 1));
  Rng shuffle_rng(derive_seed(cfg.seed, 2));
  ClassDistAccumulator acc;
  GcrProcessor gcr(cfg.gcr);
  std::optional<TeacherSnapshot> teacher;

  MetricsReport report;
  GradNormLedger last_ledger;
  double seconds = 0.0;
  std::size_t seen = 0;
  for (const TaskData& td : tasks) {
    if (td.index > 0) {
      teacher.emplace(model);
      const std::size_t width = model.output_dim() + td.classes.size();
      const auto index_map = head_expansion_index_map(model, width);
      model = expand_head(model, width, derive_seed(cfg.seed, 100 + td.index));
      gcr.begin_task(index_map, model.parameter_count());
    }
    const auto t0 = std::chrono::steady_clock::now();
    TaskLog log = train_task(model, teacher ? &*teacher : nullptr, td, cfg, acc, gcr, shuffle_rng);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.grad_trace.insert(report.grad_trace.end(), log.epochs.begin(), log.epochs.end());
    report.reweight_fallbacks += log.reweight_fallbacks;
    last_ledger = std::move(log.ledger);

    seen += td.classes.size();
    std::span<const std::size_t> seen_classes(class_order.data(), seen);
    report.incremental_accuracy.push_back(evaluate(model, stream.test.restrict_to(seen_classes), seen_classes).overall);
  }

  const ClassAccuracy final_acc = evaluate(model, stream.test.restrict_to(class_order), class_order);
  report.overall_accuracy = final_acc.overall;
  report.per_class_accuracy = final_acc.per_class;
  report.group_accuracy = group_accuracy(final_acc.per_class, stream.class_train_counts, thresholds);
  report.average_incremental_accuracy =
      std::accumulate(report.incremental_accuracy.begin(), report.incremental_accuracy.end(), 0.0) /
      static_cast<double>(report.incremental_accuracy.size());
  report.metadata = {config_hash,
                     cfg.seed,
                     stream.protocol,
                     stream.scenario,
                     stream.num_tasks,
                     class_order,
                     std::string(to_string(cfg.schedule.type)),
                     cfg.gcr.enabled,
                     cfg.reweighting_enabled};
  report.train_seconds = seconds;
  return {std::move(report), std::move(model), std::move(acc), gcr.state(), std::move(last_ledger)};
}

/// Training and inference cost of a configuration relative to its baseline:
/// the same run with GCR off and a Fixed schedule.
struct OverheadReport {
  double baseline_train_seconds = 0.0;
  double method_train_seconds = 0.0;
  double train_ratio = 0.0;
  double baseline_inference_seconds = 0.0;
  double method_inference_seconds = 0.0;
  double inference_ratio = 0.0;
};

inline TrainConfig baseline_of(TrainConfig cfg) {
  cfg.gcr.enabled = false;
  cfg.schedule = ScheduleKind{ScheduleType::Fixed, cfg.schedule.type == ScheduleType::Fixed ? cfg.schedule.fixed_lambda : 1.0};
  return cfg;
}

/// Training cost is the minimum over `train_repeats` runs per side. Inference
/// cost is the median over `inference_repeats` interleaved evaluations of the
/// two final models; evaluation reads nothing but the model and the test set.
inline OverheadReport measure_overhead(const TaskStream& stream, const TrainConfig& cfg, std::size_t train_repeats = 3,
                                       std::size_t inference_repeats = 41) {
  const TrainConfig base = baseline_of(cfg);
  std::optional<ExperimentResult> base_run, method_run;
  OverheadReport r;
  r.baseline_train_seconds = r.method_train_seconds = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < std::max<std::size_t>(1, train_repeats); ++k) {
    base_run.emplace(run_experiment(stream, base));
    method_run.emplace(run_experiment(stream, cfg));
    r.baseline_train_seconds = std::min(r.baseline_train_seconds, base_run->report.train_seconds);
    r.method_train_seconds = std::min(r.method_train_seconds, method_run->report.train_seconds);
  }
  r.train_ratio = r.method_train_seconds / r.baseline_train_seconds;

  const auto& order = method_run->report.metadata.class_order;
  const LabeledSet test = stream.test.restrict_to(order);
  auto time_eval = [&](const MlpModel& m) {
    const auto t0 = std::chrono::steady_clock::now();
    volatile double sink = evaluate(m, test, order).overall;
    (void)sink;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  std::vector<double> tb, tm;
  time_eval(base_run->model);  // warm-up
  for (std::size_t k = 0; k < std::max<std::size_t>(1, inference_repeats); ++k) {
    if (k % 2 == 0) {
      tb.push_back(time_eval(base_run->model));
      tm.push_back(time_eval(method_run->model));
    } else {
      tm.push_back(time_eval(method_run->model));
      tb.push_back(time_eval(base_run->model));
    }
  }
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  r.baseline_inference_seconds = median(tb);
  r.method_inference_seconds = median(tm);
  r.inference_ratio = r.method_inference_seconds / r.baseline_inference_seconds;
  return r;
}

}  // namespace ltcil
