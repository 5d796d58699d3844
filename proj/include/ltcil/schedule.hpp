#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "ltcil/error.hpp"

namespace ltcil {

enum class ScheduleType { Fixed, Linear, Sigmoid, EntropyLinear, EntropySigmoid };

/// Distillation-coefficient schedule. `fixed_lambda` is only read for Fixed.
struct ScheduleKind {
  ScheduleType type = ScheduleType::EntropySigmoid;
  double fixed_lambda = 1.0;

  static ScheduleKind fixed(double lambda0) {
    if (!(lambda0 >= 0.0) || !std::isfinite(lambda0)) throw InvalidInput("Fixed schedule needs a finite lambda >= 0");
    return {ScheduleType::Fixed, lambda0};
  }

  bool operator==(const ScheduleKind&) const = default;
};

/// Epoch `epoch` (0-based) of a task lasting `total_epochs`, and the current
/// normalized entropy.
struct ScheduleInput {
  std::size_t epoch = 0;
  std::size_t total_epochs = 1;
  double h_norm = 1.0;
};

inline std::string_view to_string(ScheduleType t) {
  switch (t) {
    case ScheduleType::Fixed: return "fixed";
    case ScheduleType::Linear: return "linear";
    case ScheduleType::Sigmoid: return "sigmoid";
    case ScheduleType::EntropyLinear: return "entropy_linear";
    case ScheduleType::EntropySigmoid: return "entropy_sigmoid";
  }
  return "?";
}

inline ScheduleType parse_schedule_type(std::string_view s) {
  for (auto t : {ScheduleType::Fixed, ScheduleType::Linear, ScheduleType::Sigmoid, ScheduleType::EntropyLinear,
                 ScheduleType::EntropySigmoid}) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("unknown schedule '" + std::string(s) +
                    "' (expected fixed|linear|sigmoid|entropy_linear|entropy_sigmoid)");
}

namespace detail {

inline double progress(std::size_t t, std::size_t T) {
  if (T < 1) throw InvalidInput("schedule: total epochs must be >= 1");
  if (t > T) throw InvalidInput("schedule: epoch past the end of the task");
  return static_cast<double>(t) / static_cast<double>(T);
}

}  // namespace detail

/// sigma(t/T).
inline double lambda_time_sigmoid(std::size_t t, std::size_t T) {
  return 1.0 / (1.0 + std::exp(-detail::progress(t, T)));
}

/// t/T.
inline double lambda_time_linear(std::size_t t, std::size_t T) { return detail::progress(t, T); }

inline double lambda(const ScheduleKind& kind, const ScheduleInput& in) {
  if (!(in.h_norm >= 0.0 && in.h_norm <= 1.0)) throw InvalidInput("schedule: h_norm outside [0, 1]");
  switch (kind.type) {
    case ScheduleType::Fixed: return kind.fixed_lambda;
    case ScheduleType::Linear: return lambda_time_linear(in.epoch, in.total_epochs);
    case ScheduleType::Sigmoid: return lambda_time_sigmoid(in.epoch, in.total_epochs);
    case ScheduleType::EntropyLinear: return in.h_norm * lambda_time_linear(in.epoch, in.total_epochs);
    case ScheduleType::EntropySigmoid: return in.h_norm * lambda_time_sigmoid(in.epoch, in.total_epochs);
  }
  return 0.0;
}

}  // namespace ltcil
