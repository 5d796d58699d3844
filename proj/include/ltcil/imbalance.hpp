#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "ltcil/error.hpp"

namespace ltcil {

/// Cumulative per-class sample counts over every task seen so far.
class ClassDistAccumulator {
 public:
  /// Adds a task's counts (class label -> samples).
  void update(const std::map<std::size_t, std::int64_t>& task_class_counts) {
    for (const auto& [cls, n] : task_class_counts) {
      if (n < 0) throw InvalidInput("update_distribution: negative count for class " + std::to_string(cls));
    }
    for (const auto& [cls, n] : task_class_counts) counts_[cls] += static_cast<std::uint64_t>(n);
  }

  /// Classes registered so far, including ones registered with a zero count.
  std::size_t k_total() const noexcept { return counts_.size(); }

  std::uint64_t total() const noexcept {
    std::uint64_t t = 0;
    for (const auto& [cls, n] : counts_) t += n;
    return t;
  }

  bool contains(std::size_t cls) const noexcept {
    return counts_.contains(cls);
  }

  std::map<std::size_t, double> proportions() const {
    const double t = static_cast<double>(total());
    std::map<std::size_t, double> p;
    for (const auto& [cls, n] : counts_) p[cls] = static_cast<double>(n) / t;
    return p;
  }

  const std::map<std::size_t, std::uint64_t>& counts() const noexcept { return counts_; }

  bool operator==(const ClassDistAccumulator&) const = default;

 private:
  std::map<std::size_t, std::uint64_t> counts_;
};

inline void update_distribution(ClassDistAccumulator& acc,
                                const std::map<std::size_t, std::int64_t>& task_class_counts) {
  acc.update(task_class_counts);
}

/// Shannon entropy of the accumulated class distribution divided by
/// ln(K_total). A single observed class is reported as 1.
inline double normalized_entropy(const ClassDistAccumulator& acc) {
  const std::uint64_t total = acc.total();
  if (total == 0) throw UndefinedState("normalized_entropy: accumulator is empty");
  const std::size_t k = acc.k_total();
  if (k == 1) return 1.0;
  const double t = static_cast<double>(total);
  double h = 0.0;
  for (const auto& [cls, n] : acc.counts()) {
    if (n == 0) continue;
    const double p = static_cast<double>(n) / t;
    h -= p * std::log(p);
  }
  return std::clamp(h / std::log(static_cast<double>(k)), 0.0, 1.0);
}

/// Per-class cumulative gradient norms G_c within the current task.
class GradNormLedger {
 public:
  /// Starts a new task: only `task_classes` are tracked, all at zero.
  void reset(std::span<const std::size_t> task_classes) {
    norms_.clear();
    for (std::size_t c : task_classes) norms_[c] = 0.0;
    ++generation_;
  }

  /// G_c += ||dlogits_i|| for every sample i labelled c.
  void accumulate(std::span<const std::size_t> labels, std::span<const double> sample_norms) {
    if (labels.size() != sample_norms.size()) throw InvalidInput("accumulate_grad_norms: labels and norms misaligned");
    for (double n : sample_norms) {
      if (!(n >= 0.0)) throw InvalidInput("accumulate_grad_norms: negative or NaN norm");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) norms_[labels[i]] += sample_norms[i];
  }

  const std::map<std::size_t, double>& norms() const noexcept { return norms_; }
  /// Incremented by every reset; identifies the task the ledger belongs to.
  std::uint64_t generation() const noexcept { return generation_; }

  bool operator==(const GradNormLedger&) const = default;

 private:
  std::map<std::size_t, double> norms_;
  std::uint64_t generation_ = 0;

  friend void from_json(const nlohmann::json&, GradNormLedger&);
};

inline void accumulate_grad_norms(GradNormLedger& ledger, std::span<const std::size_t> labels,
                                  std::span<const double> sample_norms) {
  ledger.accumulate(labels, sample_norms);
}

struct Reweighting {
  std::map<std::size_t, double> weights;
  /// True when some tracked class had G_c = 0 and every weight fell back to 1.
  bool fallback = false;
};

/// w_c = min_c' G_c' / G_c over the tracked classes.
inline Reweighting reweight(const GradNormLedger& ledger) {
  Reweighting r;
  const auto& g = ledger.norms();
  const bool degenerate =
      g.empty() || std::any_of(g.begin(), g.end(), [](const auto& kv) { return !(kv.second > 0.0); });
  double g_min = 0.0;
  if (!degenerate) {
    g_min = std::min_element(g.begin(), g.end(), [](const auto& a, const auto& b) {
              return a.second < b.second;
            })->second;
  }
  for (const auto& [cls, v] : g) r.weights[cls] = degenerate ? 1.0 : (v == g_min ? 1.0 : g_min / v);
  r.fallback = degenerate;
  return r;
}

inline void to_json(nlohmann::json& j, const ClassDistAccumulator& acc) {
  j = nlohmann::json::object();
  for (const auto& [cls, n] : acc.counts()) j[std::to_string(cls)] = n;
}

inline void from_json(const nlohmann::json& j, ClassDistAccumulator& acc) {
  acc = ClassDistAccumulator{};
  std::map<std::size_t, std::int64_t> counts;
  for (const auto& [key, value] : j.items()) counts[std::stoull(key)] = value.get<std::int64_t>();
  acc.update(counts);
}

inline void to_json(nlohmann::json& j, const GradNormLedger& ledger) {
  nlohmann::json norms = nlohmann::json::object();
  for (const auto& [cls, v] : ledger.norms()) norms[std::to_string(cls)] = v;
  j = {{"generation", ledger.generation()}, {"norms", norms}};
}

inline void from_json(const nlohmann::json& j, GradNormLedger& ledger) {
  ledger = GradNormLedger{};
  ledger.generation_ = j.at("generation").get<std::uint64_t>();
  for (const auto& [key, value] : j.at("norms").items()) {
    const double v = value.get<double>();
    if (!(v >= 0.0)) throw InvalidInput("GradNormLedger JSON: negative norm");
    ledger.norms_[std::stoull(key)] = v;
  }
}

}  // namespace ltcil
