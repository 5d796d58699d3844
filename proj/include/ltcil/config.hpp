#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ltcil/data.hpp"
#include "ltcil/error.hpp"
#include "ltcil/metrics.hpp"
#include "ltcil/trainer.hpp"

namespace ltcil {

enum class AblationPreset { Table, Product };

/// Everything one `ltcil` invocation needs. Read from a flat key=value file;
/// see field_table() for the keys.
struct ExperimentConfig {
  // data
  std::size_t num_classes = 20;
  std::size_t input_dim = 32;
  std::size_t n_max = 500;
  double rho = 100.0;
  double cluster_std = 0.25;
  std::size_t test_per_class = 50;
  bool shuffle_class_ranks = false;
  std::string dataset;  // optional CSV to train on instead of generating
  // protocol
  Protocol protocol = Protocol::Shuffled;
  Scenario scenario = Scenario::FromScratch;
  std::size_t num_tasks = 5;
  // training
  TrainConfig train;
  GroupThresholds thresholds;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "out";
  // ablation
  AblationPreset ablate_preset = AblationPreset::Table;
  std::vector<ScheduleType> ablate_schedules{ScheduleType::Fixed, ScheduleType::Linear, ScheduleType::Sigmoid,
                                             ScheduleType::EntropyLinear, ScheduleType::EntropySigmoid};
  std::vector<bool> ablate_gcr{true};
  std::vector<bool> ablate_reweighting{true};
  std::vector<Protocol> ablate_protocols;        // empty: use `protocol`
  std::vector<std::size_t> ablate_num_tasks;     // empty: use `num_tasks`
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt_double(double v) {
  std::string s;
  append_double(s, v);
  return s;
}

inline double to_real(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const IoError&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline std::uint64_t to_count(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError(key + ": expected true|false, got '" + v + "'");
}

inline std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  for (auto f : split_fields(v)) out.push_back(trim(f));
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F fmt) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + fmt(xs[i]);
  return s;
}

}  // namespace detail

struct ConfigField {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  /// Fields that do not change results (locations) stay out of the hash.
  bool hashed = true;
};

inline const std::vector<ConfigField>& field_table() {
  using detail::fmt_double;
  using detail::join;
  using detail::to_bool;
  using detail::to_count;
  using detail::to_list;
  using detail::to_real;
  using C = ExperimentConfig;
  auto count_field = [](std::string key, std::size_t C::*m) {
    return ConfigField{key, [key, m](C& c, const std::string& v) { c.*m = to_count(key, v); },
                       [m](const C& c) { return std::to_string(c.*m); }};
  };
  auto real_field = [](std::string key, double C::*m) {
    return ConfigField{key, [key, m](C& c, const std::string& v) { c.*m = to_real(key, v); },
                       [m](const C& c) { return fmt_double(c.*m); }};
  };
  auto on_off = [](bool b) { return std::string(b ? "true" : "false"); };
  auto count_list = [](std::size_t v) { return std::to_string(v); };

  static const std::vector<ConfigField> table{
      count_field("num_classes", &C::num_classes),
      count_field("input_dim", &C::input_dim),
      count_field("n_max", &C::n_max),
      real_field("rho", &C::rho),
      real_field("cluster_std", &C::cluster_std),
      count_field("test_per_class", &C::test_per_class),
      {"shuffle_class_ranks", [](C& c, const std::string& v) { c.shuffle_class_ranks = to_bool("shuffle_class_ranks", v); },
       [on_off](const C& c) { return on_off(c.shuffle_class_ranks); }},
      {"dataset", [](C& c, const std::string& v) { c.dataset = v; }, [](const C& c) { return c.dataset; }},
      {"protocol", [](C& c, const std::string& v) { c.protocol = parse_protocol(v); },
       [](const C& c) { return std::string(to_string(c.protocol)); }},
      {"scenario", [](C& c, const std::string& v) { c.scenario = parse_scenario(v); },
       [](const C& c) { return std::string(to_string(c.scenario)); }},
      count_field("num_tasks", &C::num_tasks),
      {"epochs_per_task", [](C& c, const std::string& v) { c.train.epochs_per_task = to_count("epochs_per_task", v); },
       [](const C& c) { return std::to_string(c.train.epochs_per_task); }},
      {"batch_size", [](C& c, const std::string& v) { c.train.batch_size = to_count("batch_size", v); },
       [](const C& c) { return std::to_string(c.train.batch_size); }},
      {"base_lr", [](C& c, const std::string& v) { c.train.base_lr = to_real("base_lr", v); },
       [](const C& c) { return fmt_double(c.train.base_lr); }},
      {"lr_milestones",
       [](C& c, const std::string& v) {
         c.train.lr_milestones.clear();
         for (const auto& s : to_list(v)) c.train.lr_milestones.push_back(to_count("lr_milestones", s));
       },
       [count_list](const C& c) { return join(c.train.lr_milestones, count_list); }},
      {"lr_decay", [](C& c, const std::string& v) { c.train.lr_decay = to_real("lr_decay", v); },
       [](const C& c) { return fmt_double(c.train.lr_decay); }},
      {"hidden_dims",
       [](C& c, const std::string& v) {
         c.train.hidden_dims.clear();
         for (const auto& s : to_list(v)) c.train.hidden_dims.push_back(to_count("hidden_dims", s));
       },
       [count_list](const C& c) { return join(c.train.hidden_dims, count_list); }},
      {"schedule", [](C& c, const std::string& v) { c.train.schedule.type = parse_schedule_type(v); },
       [](const C& c) { return std::string(to_string(c.train.schedule.type)); }},
      {"fixed_lambda", [](C& c, const std::string& v) { c.train.schedule.fixed_lambda = to_real("fixed_lambda", v); },
       [](const C& c) { return fmt_double(c.train.schedule.fixed_lambda); }},
      {"kd_temperature", [](C& c, const std::string& v) { c.train.kd_temperature = to_real("kd_temperature", v); },
       [](const C& c) { return fmt_double(c.train.kd_temperature); }},
      {"reweighting", [](C& c, const std::string& v) { c.train.reweighting_enabled = to_bool("reweighting", v); },
       [on_off](const C& c) { return on_off(c.train.reweighting_enabled); }},
      {"gcr", [](C& c, const std::string& v) { c.train.gcr.enabled = to_bool("gcr", v); },
       [on_off](const C& c) { return on_off(c.train.gcr.enabled); }},
      {"lambda_gcr", [](C& c, const std::string& v) { c.train.gcr.lambda_gcr = to_real("lambda_gcr", v); },
       [](const C& c) { return fmt_double(c.train.gcr.lambda_gcr); }},
      {"gcr_beta", [](C& c, const std::string& v) { c.train.gcr.beta = to_real("gcr_beta", v); },
       [](const C& c) { return fmt_double(c.train.gcr.beta); }},
      {"gcr_reset_on_task_boundary",
       [](C& c, const std::string& v) { c.train.gcr.reset_on_task_boundary = to_bool("gcr_reset_on_task_boundary", v); },
       [on_off](const C& c) { return on_off(c.train.gcr.reset_on_task_boundary); }},
      {"gcr_cadence", [](C& c, const std::string& v) { c.train.gcr.cadence = parse_ema_cadence(v); },
       [](const C& c) { return std::string(to_string(c.train.gcr.cadence)); }},
      {"major_min", [](C& c, const std::string& v) { c.thresholds.major_min = to_count("major_min", v); },
       [](const C& c) { return std::to_string(c.thresholds.major_min); }},
      {"minor_max", [](C& c, const std::string& v) { c.thresholds.minor_max = to_count("minor_max", v); },
       [](const C& c) { return std::to_string(c.thresholds.minor_max); }},
      {"seeds",
       [](C& c, const std::string& v) {
         c.seeds.clear();
         for (const auto& s : to_list(v)) c.seeds.push_back(to_count("seeds", s));
       },
       [](const C& c) { return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }); }},
      {"output_dir", [](C& c, const std::string& v) { c.output_dir = v; }, [](const C& c) { return c.output_dir; },
       false},
      {"ablate_preset",
       [](C& c, const std::string& v) {
         if (v == "table") c.ablate_preset = AblationPreset::Table;
         else if (v == "product") c.ablate_preset = AblationPreset::Product;
         else throw ConfigError("ablate_preset: expected table|product, got '" + v + "'");
       },
       [](const C& c) { return std::string(c.ablate_preset == AblationPreset::Table ? "table" : "product"); }},
      {"ablate_schedules",
       [](C& c, const std::string& v) {
         c.ablate_schedules.clear();
         for (const auto& s : to_list(v)) c.ablate_schedules.push_back(parse_schedule_type(s));
       },
       [](const C& c) { return join(c.ablate_schedules, [](ScheduleType t) { return std::string(to_string(t)); }); }},
      {"ablate_gcr",
       [](C& c, const std::string& v) {
         c.ablate_gcr.clear();
         for (const auto& s : to_list(v)) c.ablate_gcr.push_back(to_bool("ablate_gcr", s));
       },
       [on_off](const C& c) { return join(c.ablate_gcr, on_off); }},
      {"ablate_reweighting",
       [](C& c, const std::string& v) {
         c.ablate_reweighting.clear();
         for (const auto& s : to_list(v)) c.ablate_reweighting.push_back(to_bool("ablate_reweighting", s));
       },
       [on_off](const C& c) { return join(c.ablate_reweighting, on_off); }},
      {"ablate_protocols",
       [](C& c, const std::string& v) {
         c.ablate_protocols.clear();
         for (const auto& s : to_list(v)) c.ablate_protocols.push_back(parse_protocol(s));
       },
       [](const C& c) { return join(c.ablate_protocols, [](Protocol p) { return std::string(to_string(p)); }); }},
      {"ablate_num_tasks",
       [](C& c, const std::string& v) {
         c.ablate_num_tasks.clear();
         for (const auto& s : to_list(v)) c.ablate_num_tasks.push_back(to_count("ablate_num_tasks", s));
       },
       [count_list](const C& c) { return join(c.ablate_num_tasks, count_list); }},
  };
  return table;
}

/// Applies one key=value assignment; unknown keys are rejected.
inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : field_table()) {
    if (f.key == key) {
      try {
        f.set(cfg, value);
      } catch (const ConfigError& e) {
        const std::string msg = e.what();
        throw ConfigError(msg.rfind(key + ":", 0) == 0 ? msg : key + ": " + msg);
      }
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

/// Parses "key=value" lines; '#' starts a comment. Keys may appear once.
inline ExperimentConfig parse_config(std::istream& is, ExperimentConfig cfg = {}) {
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    if (auto [it, fresh] = seen.emplace(key, lineno); !fresh) {
      throw ConfigError("line " + std::to_string(lineno) + ": key '" + key + "' already set on line " +
                        std::to_string(it->second));
    }
    set_config_value(cfg, key, value);
  }
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

/// Every key with its resolved value, one per line, in table order.
inline std::string canonical_config_text(const ExperimentConfig& cfg, bool hashed_only = false) {
  std::string out;
  for (const auto& f : field_table()) {
    if (hashed_only && !f.hashed) continue;
    out += f.key + "=" + f.get(cfg) + "\n";
  }
  return out;
}

/// FNV-1a over the canonical text of every result-affecting key.
inline std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_config_text(cfg, true)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static const char* hex = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = hex[h & 0xF];
  return s;
}

/// Checks every cross-field constraint before any work starts.
inline void validate(const ExperimentConfig& cfg) {
  if (cfg.dataset.empty()) {
    build_profile(cfg.num_classes, cfg.n_max, cfg.rho);
    if (cfg.input_dim == 0) throw ConfigError("input_dim: must be positive");
    if (!(cfg.cluster_std > 0.0)) throw ConfigError("cluster_std: must be positive");
    if (cfg.test_per_class == 0) throw ConfigError("test_per_class: must be positive");
  }
  auto check_tasks = [&](std::size_t n, Scenario sc) {
    if (!cfg.dataset.empty()) return;
    const std::size_t available = sc == Scenario::FromHalf ? cfg.num_classes - (cfg.num_classes + 1) / 2 : cfg.num_classes;
    if (n == 0 || n > available) {
      throw ConfigError("num_tasks: " + std::to_string(n) + " tasks need 1.." + std::to_string(available) +
                        " classes to distribute under " + std::string(to_string(sc)));
    }
  };
  check_tasks(cfg.num_tasks, cfg.scenario);
  for (std::size_t n : cfg.ablate_num_tasks) check_tasks(n, cfg.scenario);
  try {
    cfg.train.validate();
    cfg.thresholds.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("training: ") + e.what());
  }
  if (cfg.seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (cfg.ablate_schedules.empty() || cfg.ablate_gcr.empty() || cfg.ablate_reweighting.empty()) {
    throw ConfigError("ablate_*: axis lists must not be empty");
  }
}

/// Seeds of the per-run sub-streams.
inline std::uint64_t data_seed(std::uint64_t seed) { return derive_seed(seed, 10); }
inline std::uint64_t split_seed(std::uint64_t seed) { return derive_seed(seed, 11); }

inline SyntheticSpec synthetic_spec(const ExperimentConfig& cfg, std::uint64_t seed) {
  return {cfg.num_classes, cfg.input_dim, cfg.cluster_std, cfg.test_per_class, data_seed(seed), cfg.shuffle_class_ranks};
}

inline Dataset load_dataset_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset " + path);
  return read_dataset_csv(is);
}

/// Dataset for one seed: the configured CSV, or a fresh synthetic draw.
inline Dataset make_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (!cfg.dataset.empty()) return load_dataset_file(cfg.dataset);
  return generate_dataset(synthetic_spec(cfg, seed), build_profile(cfg.num_classes, cfg.n_max, cfg.rho));
}

inline TaskStream make_stream(const ExperimentConfig& cfg, const Dataset& ds, std::uint64_t seed) {
  return split_tasks(ds, cfg.num_tasks, cfg.protocol, cfg.scenario, split_seed(seed));
}

inline TrainConfig train_config_for(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.seed = seed;
  return t;
}

/// One row of the ablation table.
struct AblationCell {
  std::string name;
  ScheduleKind schedule;
  bool gcr = true;
  bool reweighting = true;
};

/// One column: a protocol and task count.
struct AblationColumn {
  Protocol protocol = Protocol::Shuffled;
  std::size_t num_tasks = 0;

  std::string name() const { return std::string(to_string(protocol)) + "_N" + std::to_string(num_tasks); }
};

/// Cells differ from `base` only in schedule, GCR and reweighting (rows) and
/// protocol and task count (columns).
struct AblationGrid {
  ExperimentConfig base;
  std::vector<AblationCell> rows;
  std::vector<AblationColumn> columns;

  ExperimentConfig cell_config(const AblationCell& row, const AblationColumn& col) const {
    ExperimentConfig c = base;
    c.train.schedule.type = row.schedule.type;
    c.train.schedule.fixed_lambda = row.schedule.fixed_lambda;
    c.train.gcr.enabled = row.gcr;
    c.train.reweighting_enabled = row.reweighting;
    c.protocol = col.protocol;
    c.num_tasks = col.num_tasks;
    return c;
  }
};

/// Table preset: the Fixed row is the plain reweighting baseline (GCR off),
/// every other schedule runs with reweighting and GCR on. Product preset: the
/// full cartesian product of the ablate_* axes.
inline AblationGrid make_ablation_grid(const ExperimentConfig& cfg) {
  validate(cfg);
  AblationGrid g;
  g.base = cfg;
  const double l0 = cfg.train.schedule.fixed_lambda;
  if (cfg.ablate_preset == AblationPreset::Table) {
    for (ScheduleType t : cfg.ablate_schedules) {
      const bool gcr = t != ScheduleType::Fixed;
      g.rows.push_back({std::string(to_string(t)), {t, l0}, gcr, true});
    }
  } else {
    for (ScheduleType t : cfg.ablate_schedules) {
      for (bool gcr : cfg.ablate_gcr) {
        for (bool rw : cfg.ablate_reweighting) {
          g.rows.push_back({std::string(to_string(t)) + "/gcr=" + (gcr ? "on" : "off") + "/gr=" + (rw ? "on" : "off"),
                            {t, l0}, gcr, rw});
        }
      }
    }
  }
  const auto protocols = cfg.ablate_protocols.empty() ? std::vector<Protocol>{cfg.protocol} : cfg.ablate_protocols;
  const auto ns = cfg.ablate_num_tasks.empty() ? std::vector<std::size_t>{cfg.num_tasks} : cfg.ablate_num_tasks;
  for (Protocol p : protocols) {
    for (std::size_t n : ns) g.columns.push_back({p, n});
  }
  return g;
}

}  // namespace ltcil
