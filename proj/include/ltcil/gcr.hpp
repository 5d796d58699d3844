#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltcil/error.hpp"
#include "ltcil/nn.hpp"

namespace ltcil {

/// When the gradient moving average absorbs new gradients.
enum class EmaCadence { PerBatch, PerEpochMean };

inline std::string_view to_string(EmaCadence c) { return c == EmaCadence::PerBatch ? "per_batch" : "per_epoch_mean"; }

inline EmaCadence parse_ema_cadence(std::string_view s) {
  if (s == "per_batch") return EmaCadence::PerBatch;
  if (s == "per_epoch_mean") return EmaCadence::PerEpochMean;
  throw ConfigError("unknown gcr cadence '" + std::string(s) + "' (expected per_batch|per_epoch_mean)");
}

struct GcrConfig {
  bool enabled = true;
  double lambda_gcr = 0.1;
  double beta = 0.9;
  bool reset_on_task_boundary = false;
  EmaCadence cadence = EmaCadence::PerBatch;

  void validate() const {
    if (!(lambda_gcr >= 0.0) || !std::isfinite(lambda_gcr)) throw ConfigError("gcr: lambda_gcr must be finite and >= 0");
    if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("gcr: beta must lie in [0, 1)");
  }

  bool operator==(const GcrConfig&) const = default;
};

/// Exponential moving average of gradients.
///
/// The average starts from the first gradient it sees. When the model grows
/// (head expansion) the new coordinates are marked pending and are seeded the
/// same way, coordinate by coordinate, on their next update.
class EmaState {
 public:
  explicit EmaState(double beta = 0.9) : beta_(beta) {
    if (!(beta >= 0.0 && beta < 1.0)) throw InvalidInput("EmaState: beta must lie in [0, 1)");
  }

  const FlatGradient& g_bar() const noexcept { return g_bar_; }
  double beta() const noexcept { return beta_; }
  bool initialized() const noexcept { return initialized_; }
  std::uint64_t update_count() const noexcept { return update_count_; }
  const std::vector<bool>& pending() const noexcept { return pending_; }

  void reset() {
    g_bar_.values.clear();
    pending_.clear();
    initialized_ = false;
  }

  /// Re-embeds the average after the parameter vector was re-laid out:
  /// old coordinate i moves to new_index_of_old[i]; the rest become pending.
  void remap(std::span<const std::size_t> new_index_of_old, std::size_t new_size) {
    if (!initialized_) return;
    if (new_index_of_old.size() != g_bar_.size()) throw InvalidInput("EmaState::remap: map length mismatch");
    std::vector<double> values(new_size, 0.0);
    std::vector<bool> pending(new_size, true);
    for (std::size_t i = 0; i < new_index_of_old.size(); ++i) {
      const std::size_t j = new_index_of_old[i];
      if (j >= new_size) throw InvalidInput("EmaState::remap: index out of range");
      values[j] = g_bar_.values[i];
      pending[j] = pending_.empty() ? false : pending_[i];
    }
    g_bar_.values = std::move(values);
    pending_ = std::move(pending);
  }

  bool operator==(const EmaState&) const = default;

 private:
  FlatGradient g_bar_;
  std::vector<bool> pending_;  // empty when no coordinate is pending
  double beta_;
  bool initialized_ = false;
  std::uint64_t update_count_ = 0;

  friend FlatGradient gcr_apply(const EmaState&, const FlatGradient&, double);
  friend void ema_update(EmaState&, const FlatGradient&);
  friend void from_json(const nlohmann::json&, EmaState&);
};

/// g' = g + lambda_gcr * (g - g_bar), using the average as it stands before
/// `g` is absorbed. An uninitialized state passes `g` through.
inline FlatGradient gcr_apply(const EmaState& state, const FlatGradient& g, double lambda_gcr) {
  if (!state.initialized_) return g;
  if (g.size() != state.g_bar_.size()) {
    throw InvalidInput("gcr_apply: gradient length " + std::to_string(g.size()) + " != moving average length " +
                       std::to_string(state.g_bar_.size()));
  }
  FlatGradient out{std::vector<double>(g.size())};
  const bool any_pending = !state.pending_.empty();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double gi = g.values[i];
    out.values[i] = (any_pending && state.pending_[i]) ? gi : gi + lambda_gcr * (gi - state.g_bar_.values[i]);
  }
  return out;
}

/// g_bar <- beta * g_bar + (1 - beta) * g; the first update copies g.
inline void ema_update(EmaState& state, const FlatGradient& g) {
  if (!state.initialized_) {
    state.g_bar_ = g;
    state.pending_.clear();
    state.initialized_ = true;
    ++state.update_count_;
    return;
  }
  if (g.size() != state.g_bar_.size()) {
    throw InvalidInput("ema_update: gradient length " + std::to_string(g.size()) + " != moving average length " +
                       std::to_string(state.g_bar_.size()));
  }
  const double b = state.beta_;
  const bool any_pending = !state.pending_.empty();
  for (std::size_t i = 0; i < g.size(); ++i) {
    double& m = state.g_bar_.values[i];
    m = (any_pending && state.pending_[i]) ? g.values[i] : b * m + (1.0 - b) * g.values[i];
  }
  state.pending_.clear();
  ++state.update_count_;
}

/// gcr_apply followed by ema_update.
inline FlatGradient gcr_step(EmaState& state, const FlatGradient& g, const GcrConfig& config) {
  FlatGradient out = gcr_apply(state, g, config.lambda_gcr);
  ema_update(state, g);
  return out;
}

/// Drives an EmaState through a training run under either cadence.
class GcrProcessor {
 public:
  explicit GcrProcessor(GcrConfig config) : config_((config.validate(), config)), state_(config.beta) {}

  /// Regularized gradient for one mini-batch.
  FlatGradient process(const FlatGradient& g) {
    if (config_.cadence == EmaCadence::PerBatch) return gcr_step(state_, g, config_);
    FlatGradient out = gcr_apply(state_, g, config_.lambda_gcr);
    if (epoch_sum_.empty()) epoch_sum_.assign(g.size(), 0.0);
    if (epoch_sum_.size() != g.size()) throw InvalidInput("GcrProcessor: gradient length changed within an epoch");
    for (std::size_t i = 0; i < g.size(); ++i) epoch_sum_[i] += g.values[i];
    ++epoch_batches_;
    return out;
  }

  void end_epoch() {
    if (config_.cadence != EmaCadence::PerEpochMean || epoch_batches_ == 0) return;
    FlatGradient mean{std::move(epoch_sum_)};
    for (double& v : mean.values) v /= static_cast<double>(epoch_batches_);
    ema_update(state_, mean);
    epoch_sum_.clear();
    epoch_batches_ = 0;
  }

  void begin_task(std::span<const std::size_t> new_index_of_old, std::size_t new_size) {
    if (config_.reset_on_task_boundary) {
      state_.reset();
    } else {
      state_.remap(new_index_of_old, new_size);
    }
  }

  const EmaState& state() const noexcept { return state_; }
  const GcrConfig& config() const noexcept { return config_; }

 private:
  GcrConfig config_;
  EmaState state_;
  std::vector<double> epoch_sum_;
  std::size_t epoch_batches_ = 0;
};

inline void to_json(nlohmann::json& j, const EmaState& s) {
  j = {{"beta", s.beta()},
       {"initialized", s.initialized()},
       {"update_count", s.update_count()},
       {"g_bar", s.g_bar().values},
       {"pending", s.pending()}};
}

inline void from_json(const nlohmann::json& j, EmaState& s) {
  s = EmaState(j.at("beta").get<double>());
  s.initialized_ = j.at("initialized").get<bool>();
  s.update_count_ = j.at("update_count").get<std::uint64_t>();
  s.g_bar_.values = j.at("g_bar").get<std::vector<double>>();
  s.pending_ = j.at("pending").get<std::vector<bool>>();
  if (!s.pending_.empty() && s.pending_.size() != s.g_bar_.size()) {
    throw InvalidInput("EmaState JSON: pending mask length mismatch");
  }
}

}  // namespace ltcil
