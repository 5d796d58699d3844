#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltcil/config.hpp"
#include "ltcil/figures.hpp"
#include "ltcil/io.hpp"
#include "ltcil/metrics.hpp"
#include "ltcil/trainer.hpp"

namespace ltcil {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2, kExitPartial = 3 };

/// Environment variable naming the root that relative output directories
/// are resolved against.
inline constexpr const char* kOutputRootEnv = "LTCIL_OUTPUT_ROOT";

inline std::filesystem::path resolve_output_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') return std::filesystem::path(root) / p;
  }
  return p;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidInput("median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::string report_text(const MetricsReport& r) { return nlohmann::json(r).dump(2) + "\n"; }

inline std::string trace_text(const GradTrace& trace) {
  std::ostringstream os;
  write_trace_csv(os, trace);
  return os.str();
}

inline std::string model_bytes(const MlpModel& model) {
  std::ostringstream os(std::ios::binary);
  save_model(os, model);
  return os.str();
}

struct GenerateResult {
  double realized_ratio = 0.0;
  std::filesystem::path dataset_path;
  std::filesystem::path profile_path;
};

/// Writes dataset.csv and profile.json for the first configured seed.
inline GenerateResult cmd_generate(const ExperimentConfig& cfg, std::ostream& log) {
  validate(cfg);
  const auto out = resolve_output_dir(cfg.output_dir);
  const Dataset ds = make_dataset(cfg, cfg.seeds.front());
  const auto counts = ds.train_counts();
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  GenerateResult r{static_cast<double>(*hi) / static_cast<double>(*lo), out / "dataset.csv", out / "profile.json"};
  std::ostringstream csv;
  write_dataset_csv(csv, ds);
  write_file_atomic(r.dataset_path, csv.str());
  write_file_atomic(r.profile_path, profile_to_json(counts).dump(2) + "\n");
  log << "wrote " << r.dataset_path.string() << " and " << r.profile_path.string() << '\n';
  log << "realized imbalance ratio: " << std::fixed << std::setprecision(4) << r.realized_ratio << '\n';
  log.unsetf(std::ios::floatfield);
  return r;
}

/// Trains and evaluates one seed, writing report, trace, model snapshot,
/// run state and figure under `out`. A non-finite training step leaves a
/// diagnostic file and rethrows.
inline MetricsReport run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& out,
                              const Dataset* dataset = nullptr) {
  std::optional<Dataset> owned;
  if (dataset == nullptr) dataset = &owned.emplace(make_dataset(cfg, seed));
  const TaskStream stream = make_stream(cfg, *dataset, seed);
  const std::string tag = "seed" + std::to_string(seed);
  try {
    ExperimentResult res = run_experiment(stream, train_config_for(cfg, seed), cfg.thresholds, config_hash(cfg));
    write_file_atomic(out / ("report_" + tag + ".json"), report_text(res.report));
    write_file_atomic(out / ("trace_" + tag + ".csv"), trace_text(res.report.grad_trace));
    write_file_atomic(out / ("model_" + tag + ".bin"), model_bytes(res.model));
    const nlohmann::json state = {{"accumulator", res.accumulator}, {"ledger", res.ledger}, {"ema", res.ema}};
    write_file_atomic(out / ("state_" + tag + ".json"), state.dump() + "\n");
    emit_figure_data({{tag, res.report.grad_trace}}, FigureFormat::Svg, out / ("gradnorm_" + tag + ".svg"));
    return res.report;
  } catch (const NumericalError& e) {
    write_file_atomic(out / ("diagnostic_" + tag + ".json"), e.diagnostic() + "\n");
    throw;
  }
}

/// One report per seed plus the resolved config.
inline int cmd_run(const ExperimentConfig& cfg, std::ostream& log) {
  validate(cfg);
  const auto out = resolve_output_dir(cfg.output_dir);
  write_file_atomic(out / "config.txt", canonical_config_text(cfg));
  for (std::uint64_t seed : cfg.seeds) {
    try {
      const MetricsReport r = run_seed(cfg, seed, out);
      log << "seed " << seed << ": overall accuracy " << r.overall_accuracy << '\n';
    } catch (const NumericalError& e) {
      log << "seed " << seed << ": " << e.what() << " (diagnostic written)\n";
      return kExitRuntime;
    }
  }
  return kExitOk;
}

inline std::string path_safe(std::string s) {
  for (char& c : s) {
    if (c == '/' || c == '=' || c == ' ') c = '_';
  }
  return s;
}

struct AblationOutcome {
  /// rows x columns of median final accuracy; nullopt where every seed failed.
  std::vector<std::vector<std::optional<double>>> medians;
  std::vector<std::string> failures;
};

/// Runs every (row, column, seed) cell of the grid on up to `jobs` threads
/// and writes ablation_table.csv plus the raw per-cell reports.
inline AblationOutcome run_ablation(const AblationGrid& grid, std::size_t jobs, std::ostream& log) {
  const auto out = resolve_output_dir(grid.base.output_dir);
  const auto& seeds = grid.base.seeds;
  struct Unit {
    std::size_t row, col, seed_idx;
  };
  std::vector<Unit> units;
  for (std::size_t r = 0; r < grid.rows.size(); ++r)
    for (std::size_t c = 0; c < grid.columns.size(); ++c)
      for (std::size_t s = 0; s < seeds.size(); ++s) units.push_back({r, c, s});

  std::vector<Dataset> datasets;
  for (std::uint64_t seed : seeds) datasets.push_back(make_dataset(grid.base, seed));

  std::vector<std::vector<std::vector<double>>> acc(grid.rows.size(),
                                                    std::vector<std::vector<double>>(grid.columns.size()));
  AblationOutcome outcome;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < units.size(); i = next++) {
      const Unit u = units[i];
      const auto& row = grid.rows[u.row];
      const auto& col = grid.columns[u.col];
      const ExperimentConfig cell = grid.cell_config(row, col);
      const auto dir = out / "cells" / path_safe(row.name) / col.name();
      try {
        const MetricsReport r = run_seed(cell, seeds[u.seed_idx], dir, &datasets[u.seed_idx]);
        std::lock_guard lock(mu);
        acc[u.row][u.col].push_back(r.overall_accuracy);
        log << row.name << " / " << col.name() << " / seed " << seeds[u.seed_idx] << ": " << r.overall_accuracy << '\n';
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        outcome.failures.push_back(row.name + " / " + col.name() + " / seed " + std::to_string(seeds[u.seed_idx]) +
                                   ": " + e.what());
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::max<std::size_t>(1, jobs); ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::string table = "variant";
  for (const auto& col : grid.columns) table += "," + col.name();
  table += "\n";
  outcome.medians.assign(grid.rows.size(), std::vector<std::optional<double>>(grid.columns.size()));
  for (std::size_t r = 0; r < grid.rows.size(); ++r) {
    table += grid.rows[r].name;
    for (std::size_t c = 0; c < grid.columns.size(); ++c) {
      table += ",";
      if (!acc[r][c].empty()) {
        outcome.medians[r][c] = median(acc[r][c]);
        detail::append_double(table, *outcome.medians[r][c]);
      }
    }
    table += "\n";
  }
  write_file_atomic(out / "config.txt", canonical_config_text(grid.base));
  write_file_atomic(out / "ablation_table.csv", table);
  if (!outcome.failures.empty()) {
    std::sort(outcome.failures.begin(), outcome.failures.end());
    std::string text;
    for (const auto& f : outcome.failures) text += f + "\n";
    write_file_atomic(out / "ablation_failures.txt", text);
  }
  return outcome;
}

inline int cmd_ablate(const ExperimentConfig& cfg, std::size_t jobs, std::ostream& log) {
  const AblationGrid grid = make_ablation_grid(cfg);
  const AblationOutcome outcome = run_ablation(grid, jobs, log);
  for (const auto& f : outcome.failures) log << "FAILED " << f << '\n';
  return outcome.failures.empty() ? kExitOk : kExitPartial;
}

/// Re-renders the summary table and the gradient-norm figure from stored
/// report_*.json files under `input`, without retraining.
inline int cmd_report(const std::filesystem::path& input, const std::filesystem::path& output, std::ostream& log) {
  if (!std::filesystem::is_directory(input)) throw IoError("report: " + input.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(input)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.rfind("report_", 0) == 0 && e.path().extension() == ".json") files.push_back(e.path());
  }
  if (files.empty()) {
    log << "no report_*.json files under " << input.string() << '\n';
    return kExitRuntime;
  }
  std::sort(files.begin(), files.end());
  std::string summary =
      "report,seed,schedule,gcr,reweighting,protocol,num_tasks,overall_accuracy,major,medium,minor,"
      "average_incremental_accuracy\n";
  std::vector<NamedTrace> series;
  auto opt = [](const std::optional<double>& v) {
    std::string s;
    if (v) detail::append_double(s, *v);
    return s;
  };
  for (const auto& f : files) {
    const MetricsReport r = nlohmann::json::parse(read_file(f)).get<MetricsReport>();
    const std::string name = std::filesystem::relative(f, input).string();
    summary += name + "," + std::to_string(r.metadata.seed) + "," + r.metadata.schedule + "," +
               (r.metadata.gcr_enabled ? "true" : "false") + "," + (r.metadata.reweighting_enabled ? "true" : "false") +
               "," + std::string(to_string(r.metadata.protocol)) + "," + std::to_string(r.metadata.num_tasks) + ",";
    detail::append_double(summary, r.overall_accuracy);
    summary += "," + opt(r.group_accuracy.major) + "," + opt(r.group_accuracy.medium) + "," +
               opt(r.group_accuracy.minor) + ",";
    detail::append_double(summary, r.average_incremental_accuracy);
    summary += "\n";
    if (!r.grad_trace.empty()) series.push_back({path_safe(name), r.grad_trace});
  }
  write_file_atomic(output / "summary.csv", summary);
  if (!series.empty()) {
    emit_figure_data(series, FigureFormat::Svg, output / "gradnorm.svg");
    emit_figure_data(series, FigureFormat::Columnar, output / "gradnorm.csv");
  }
  log << "summarized " << files.size() << " reports into " << output.string() << '\n';
  return kExitOk;
}

}  // namespace ltcil
