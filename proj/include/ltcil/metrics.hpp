#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltcil/data.hpp"
#include "ltcil/error.hpp"
#include "ltcil/nn.hpp"

namespace ltcil {

/// One row of the per-epoch training log. Gradient-norm statistics are over
/// the mini-batches of the epoch, before ("pre") and after ("post") GCR.
struct EpochGradStats {
  std::size_t task = 0;
  std::size_t epoch = 0;
  double lambda = 0.0;
  double h_norm = 0.0;
  double lr = 0.0;
  double ce_loss = 0.0;
  double kd_loss = 0.0;
  double grad_norm_mean_pre = 0.0;
  double grad_norm_min_pre = 0.0;
  double grad_norm_max_pre = 0.0;
  double grad_norm_mean_post = 0.0;
  double grad_norm_min_post = 0.0;
  double grad_norm_max_post = 0.0;

  bool operator==(const EpochGradStats&) const = default;
};

using GradTrace = std::vector<EpochGradStats>;

struct ClassAccuracy {
  std::map<std::size_t, double> per_class;
  double overall = 0.0;
};

/// Argmax over the first classes_seen.size() logits; column j stands for
/// class classes_seen[j]. Overall accuracy is the unweighted mean of the
/// per-class values.
inline ClassAccuracy evaluate(const MlpModel& model, const LabeledSet& test,
                              std::span<const std::size_t> classes_seen) {
  if (classes_seen.empty()) throw InvalidInput("evaluate: no classes");
  if (model.output_dim() < classes_seen.size()) throw InvalidInput("evaluate: model head narrower than classes_seen");
  std::map<std::size_t, std::size_t> column_of;
  for (std::size_t j = 0; j < classes_seen.size(); ++j) column_of[classes_seen[j]] = j;
  std::map<std::size_t, std::size_t> total, correct;
  for (std::size_t y : test.labels) {
    if (!column_of.contains(y)) throw InvalidInput("evaluate: test sample of unseen class " + std::to_string(y));
    ++total[y];
  }
  for (std::size_t c : classes_seen) {
    if (!total.contains(c)) throw InvalidInput("evaluate: class " + std::to_string(c) + " missing from test set");
  }

  const DenseMatrix logits = forward(model, test.inputs);
  for (std::size_t i = 0; i < test.size(); ++i) {
    auto z = logits.row(i).first(classes_seen.size());
    const auto best = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    if (classes_seen[best] == test.labels[i]) ++correct[test.labels[i]];
  }
  ClassAccuracy acc;
  for (const auto& [c, n] : total) {
    acc.per_class[c] = static_cast<double>(correct[c]) / static_cast<double>(n);
    acc.overall += acc.per_class[c];
  }
  acc.overall /= static_cast<double>(acc.per_class.size());
  return acc;
}

/// Major: strictly more than major_min training samples; Minor: at most
/// minor_max; Medium: in between.
struct GroupThresholds {
  std::size_t major_min = 100;
  std::size_t minor_max = 20;

  void validate() const {
    if (!(minor_max < major_min)) throw ConfigError("group thresholds: minor_max must be < major_min");
  }
  bool operator==(const GroupThresholds&) const = default;
};

enum class ClassGroup { Major, Medium, Minor };

inline ClassGroup classify(std::size_t train_count, const GroupThresholds& th) {
  if (train_count > th.major_min) return ClassGroup::Major;
  if (train_count <= th.minor_max) return ClassGroup::Minor;
  return ClassGroup::Medium;
}

/// Unweighted mean accuracy per group; a group without classes is absent.
struct GroupAccuracy {
  std::optional<double> major;
  std::optional<double> medium;
  std::optional<double> minor;
  std::size_t major_classes = 0;
  std::size_t medium_classes = 0;
  std::size_t minor_classes = 0;

  bool operator==(const GroupAccuracy&) const = default;
};

inline GroupAccuracy group_accuracy(const std::map<std::size_t, double>& per_class_accuracy,
                                    std::span<const std::size_t> class_train_counts, const GroupThresholds& th) {
  th.validate();
  double sums[3] = {0, 0, 0};
  std::size_t ns[3] = {0, 0, 0};
  for (const auto& [c, a] : per_class_accuracy) {
    if (c >= class_train_counts.size()) throw InvalidInput("group_accuracy: class " + std::to_string(c) + " has no profile count");
    const auto g = static_cast<int>(classify(class_train_counts[c], th));
    sums[g] += a;
    ++ns[g];
  }
  auto mean = [&](int g) -> std::optional<double> {
    if (ns[g] == 0) return std::nullopt;
    return sums[g] / static_cast<double>(ns[g]);
  };
  return {mean(0), mean(1), mean(2), ns[0], ns[1], ns[2]};
}

/// Trace indices where a new task begins.
inline std::vector<std::size_t> task_boundaries(const GradTrace& trace) {
  std::vector<std::size_t> b;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i].task != trace[i - 1].task) b.push_back(i);
  }
  return b;
}

/// Gradient-norm behaviour in the first epoch after a task switch: its
/// within-epoch (max - min) range, and the jump of its mean over the last
/// epoch of the previous task.
struct BoundaryStability {
  std::size_t trace_index = 0;
  std::size_t task = 0;
  double range_pre = 0.0;
  double jump_pre = 0.0;
  double range_post = 0.0;
  double jump_post = 0.0;

  bool operator==(const BoundaryStability&) const = default;
};

inline std::vector<BoundaryStability> boundary_stability(const GradTrace& trace,
                                                         std::span<const std::size_t> boundaries) {
  std::vector<BoundaryStability> out;
  for (std::size_t b : boundaries) {
    if (b == 0 || b >= trace.size()) throw InvalidInput("boundary_stability: boundary outside the trace");
    const auto& cur = trace[b];
    const auto& prev = trace[b - 1];
    out.push_back({b, cur.task, cur.grad_norm_max_pre - cur.grad_norm_min_pre,
                   cur.grad_norm_mean_pre - prev.grad_norm_mean_pre, cur.grad_norm_max_post - cur.grad_norm_min_post,
                   cur.grad_norm_mean_post - prev.grad_norm_mean_post});
  }
  return out;
}

struct RunMetadata {
  std::string config_hash;
  std::uint64_t seed = 0;
  Protocol protocol = Protocol::Shuffled;
  Scenario scenario = Scenario::FromScratch;
  std::size_t num_tasks = 0;
  std::vector<std::size_t> class_order;  // class of each output column
  std::string schedule;
  bool gcr_enabled = false;
  bool reweighting_enabled = false;

  bool operator==(const RunMetadata&) const = default;
};

struct MetricsReport {
  double overall_accuracy = 0.0;
  std::map<std::size_t, double> per_class_accuracy;
  GroupAccuracy group_accuracy;
  GradTrace grad_trace;
  /// Overall accuracy on the classes seen so far, after each task.
  std::vector<double> incremental_accuracy;
  double average_incremental_accuracy = 0.0;
  /// Epochs where reweighting fell back to unit weights.
  std::size_t reweight_fallbacks = 0;
  RunMetadata metadata;
  /// Wall-clock; excluded from reproducibility comparisons.
  double train_seconds = 0.0;

  bool operator==(const MetricsReport&) const = default;
};

inline void to_json(nlohmann::json& j, const EpochGradStats& s) {
  j = {{"task", s.task},
       {"epoch", s.epoch},
       {"lambda", s.lambda},
       {"h_norm", s.h_norm},
       {"lr", s.lr},
       {"ce_loss", s.ce_loss},
       {"kd_loss", s.kd_loss},
       {"grad_norm_mean_pre", s.grad_norm_mean_pre},
       {"grad_norm_min_pre", s.grad_norm_min_pre},
       {"grad_norm_max_pre", s.grad_norm_max_pre},
       {"grad_norm_mean_post", s.grad_norm_mean_post},
       {"grad_norm_min_post", s.grad_norm_min_post},
       {"grad_norm_max_post", s.grad_norm_max_post}};
}

inline void from_json(const nlohmann::json& j, EpochGradStats& s) {
  j.at("task").get_to(s.task);
  j.at("epoch").get_to(s.epoch);
  j.at("lambda").get_to(s.lambda);
  j.at("h_norm").get_to(s.h_norm);
  j.at("lr").get_to(s.lr);
  j.at("ce_loss").get_to(s.ce_loss);
  j.at("kd_loss").get_to(s.kd_loss);
  j.at("grad_norm_mean_pre").get_to(s.grad_norm_mean_pre);
  j.at("grad_norm_min_pre").get_to(s.grad_norm_min_pre);
  j.at("grad_norm_max_pre").get_to(s.grad_norm_max_pre);
  j.at("grad_norm_mean_post").get_to(s.grad_norm_mean_post);
  j.at("grad_norm_min_post").get_to(s.grad_norm_min_post);
  j.at("grad_norm_max_post").get_to(s.grad_norm_max_post);
}

namespace detail {

inline nlohmann::json class_map_to_json(const std::map<std::size_t, double>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [c, v] : m) j[std::to_string(c)] = v;
  return j;
}

inline std::map<std::size_t, double> class_map_from_json(const nlohmann::json& j) {
  std::map<std::size_t, double> m;
  for (const auto& [k, v] : j.items()) m[std::stoull(k)] = v.get<double>();
  return m;
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const GroupAccuracy& g) {
  j = nlohmann::json::object();
  if (g.major) j["major"] = *g.major;
  if (g.medium) j["medium"] = *g.medium;
  if (g.minor) j["minor"] = *g.minor;
  j["class_counts"] = {{"major", g.major_classes}, {"medium", g.medium_classes}, {"minor", g.minor_classes}};
}

inline void from_json(const nlohmann::json& j, GroupAccuracy& g) {
  g = GroupAccuracy{};
  if (j.contains("major")) g.major = j["major"].get<double>();
  if (j.contains("medium")) g.medium = j["medium"].get<double>();
  if (j.contains("minor")) g.minor = j["minor"].get<double>();
  const auto& n = j.at("class_counts");
  n.at("major").get_to(g.major_classes);
  n.at("medium").get_to(g.medium_classes);
  n.at("minor").get_to(g.minor_classes);
}

inline void to_json(nlohmann::json& j, const RunMetadata& m) {
  j = {{"config_hash", m.config_hash},
       {"seed", m.seed},
       {"protocol", std::string(to_string(m.protocol))},
       {"scenario", std::string(to_string(m.scenario))},
       {"num_tasks", m.num_tasks},
       {"class_order", m.class_order},
       {"schedule", m.schedule},
       {"gcr_enabled", m.gcr_enabled},
       {"reweighting_enabled", m.reweighting_enabled}};
}

inline void from_json(const nlohmann::json& j, RunMetadata& m) {
  j.at("config_hash").get_to(m.config_hash);
  j.at("seed").get_to(m.seed);
  m.protocol = parse_protocol(j.at("protocol").get<std::string>());
  m.scenario = parse_scenario(j.at("scenario").get<std::string>());
  j.at("num_tasks").get_to(m.num_tasks);
  j.at("class_order").get_to(m.class_order);
  j.at("schedule").get_to(m.schedule);
  j.at("gcr_enabled").get_to(m.gcr_enabled);
  j.at("reweighting_enabled").get_to(m.reweighting_enabled);
}

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = {{"overall_accuracy", r.overall_accuracy},
       {"per_class_accuracy", detail::class_map_to_json(r.per_class_accuracy)},
       {"group_accuracy", r.group_accuracy},
       {"grad_trace", r.grad_trace},
       {"incremental_accuracy", r.incremental_accuracy},
       {"average_incremental_accuracy", r.average_incremental_accuracy},
       {"reweight_fallbacks", r.reweight_fallbacks},
       {"metadata", r.metadata},
       {"timing", {{"train_seconds", r.train_seconds}}}};
}

inline void from_json(const nlohmann::json& j, MetricsReport& r) {
  j.at("overall_accuracy").get_to(r.overall_accuracy);
  r.per_class_accuracy = detail::class_map_from_json(j.at("per_class_accuracy"));
  j.at("group_accuracy").get_to(r.group_accuracy);
  j.at("grad_trace").get_to(r.grad_trace);
  j.at("incremental_accuracy").get_to(r.incremental_accuracy);
  j.at("average_incremental_accuracy").get_to(r.average_incremental_accuracy);
  j.at("reweight_fallbacks").get_to(r.reweight_fallbacks);
  j.at("metadata").get_to(r.metadata);
  r.train_seconds = j.at("timing").at("train_seconds").get<double>();
}

/// Report JSON with the wall-clock section removed; equal for equal
/// (config, seed).
inline std::string deterministic_report_text(const MetricsReport& r) {
  nlohmann::json j = r;
  j.erase("timing");
  return j.dump(2);
}

inline const std::vector<std::string>& trace_csv_columns() {
  static const std::vector<std::string> cols{
      "task",          "epoch",           "lambda",           "h_norm",           "lr",
      "ce_loss",       "kd_loss",         "grad_norm_mean_pre", "grad_norm_min_pre", "grad_norm_max_pre",
      "grad_norm_mean_post", "grad_norm_min_post", "grad_norm_max_post"};
  return cols;
}

inline void write_trace_csv(std::ostream& os, const GradTrace& trace) {
  const auto& cols = trace_csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  std::string line;
  for (const auto& s : trace) {
    line = std::to_string(s.task) + ',' + std::to_string(s.epoch);
    for (double v : {s.lambda, s.h_norm, s.lr, s.ce_loss, s.kd_loss, s.grad_norm_mean_pre, s.grad_norm_min_pre,
                     s.grad_norm_max_pre, s.grad_norm_mean_post, s.grad_norm_min_post, s.grad_norm_max_post}) {
      line += ',';
      detail::append_double(line, v);
    }
    os << line << '\n';
  }
  if (!os) throw IoError("trace CSV: write failed");
}

inline GradTrace read_trace_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("trace CSV: empty input");
  const auto header = detail::split_fields(line);
  const auto& cols = trace_csv_columns();
  if (header.size() != cols.size() || !std::equal(header.begin(), header.end(), cols.begin())) {
    throw IoError("trace CSV: unexpected header");
  }
  GradTrace trace;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != cols.size()) throw IoError("trace CSV: wrong field count");
    EpochGradStats s;
    s.task = detail::parse_count(f[0]);
    s.epoch = detail::parse_count(f[1]);
    double* fields[] = {&s.lambda, &s.h_norm, &s.lr, &s.ce_loss, &s.kd_loss, &s.grad_norm_mean_pre,
                        &s.grad_norm_min_pre, &s.grad_norm_max_pre, &s.grad_norm_mean_post,
                        &s.grad_norm_min_post, &s.grad_norm_max_post};
    for (std::size_t k = 0; k < 11; ++k) *fields[k] = detail::parse_double(f[2 + k]);
    trace.push_back(s);
  }
  return trace;
}

}  // namespace ltcil
