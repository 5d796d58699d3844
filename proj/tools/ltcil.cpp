#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ltcil/ltcil.hpp"

namespace {

ltcil::ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  ltcil::ExperimentConfig cfg;
  if (!path.empty()) {
    std::string text;
    try {
      text = ltcil::read_file(path);
    } catch (const ltcil::IoError& e) {
      throw ltcil::ConfigError(e.what());
    }
    std::istringstream is(text);
    cfg = ltcil::parse_config(is);
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ltcil::ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    ltcil::set_config_value(cfg, ltcil::detail::trim(kv.substr(0, eq)), ltcil::detail::trim(kv.substr(eq + 1)));
  }
  ltcil::validate(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tailed class-incremental training with gradient compensation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  bool print_config = false;
  app.add_option("-c,--config", config_path, "key=value config file");
  app.add_option("-s,--set", overrides, "override one config key (KEY=VALUE), repeatable");
  app.add_flag("--print-config", print_config, "print the resolved config before running");

  auto* gen = app.add_subcommand("generate", "write a synthetic long-tailed dataset and its profile");
  auto* run = app.add_subcommand("run", "train and evaluate one configuration for every seed");
  auto* ablate = app.add_subcommand("ablate", "run the schedule/GCR/reweighting ablation grid");
  std::size_t jobs = 1;
  ablate->add_option("-j,--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  auto* report = app.add_subcommand("report", "re-render summary and figures from stored reports");
  std::string report_in, report_out;
  report->add_option("input", report_in, "directory holding report_*.json files")->required();
  report->add_option("-o,--out", report_out, "output directory (defaults to input)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ltcil::kExitOk : ltcil::kExitConfig;
  }

  try {
    if (*report) {
      return ltcil::cmd_report(report_in, report_out.empty() ? report_in : report_out, std::cout);
    }
    const ltcil::ExperimentConfig cfg = load_config(config_path, overrides);
    if (print_config) std::cout << ltcil::canonical_config_text(cfg) << "config_hash=" << ltcil::config_hash(cfg) << '\n';
    if (*gen) {
      ltcil::cmd_generate(cfg, std::cout);
      return ltcil::kExitOk;
    }
    if (*run) return ltcil::cmd_run(cfg, std::cout);
    if (*ablate) return ltcil::cmd_ablate(cfg, jobs, std::cout);
  } catch (const ltcil::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return ltcil::kExitConfig;
  } catch (const ltcil::InvalidInput& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return ltcil::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ltcil::kExitRuntime;
  }
  return ltcil::kExitOk;
}
