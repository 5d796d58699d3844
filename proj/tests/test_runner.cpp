#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "ltcil/runner.hpp"

using namespace ltcil;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("ltcil_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c = parse_config_text(
      "num_classes=6\ninput_dim=4\nn_max=30\nrho=5\ntest_per_class=4\nnum_tasks=2\n"
      "epochs_per_task=3\nlr_milestones=2\nhidden_dims=8\nseeds=1,2\n");
  c.output_dir = out.string();
  return c;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(LTCIL_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Median, OddEvenAndEmpty) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_THROW(median({}), InvalidInput);
}

TEST(OutputRoot, OnlyRelativeDirsAreRebased) {
  ::setenv(kOutputRootEnv, "/tmp/root", 1);
  EXPECT_EQ(resolve_output_dir("runs/a"), fs::path("/tmp/root/runs/a"));
  EXPECT_EQ(resolve_output_dir("/abs"), fs::path("/abs"));
  ::unsetenv(kOutputRootEnv);
  EXPECT_EQ(resolve_output_dir("runs/a"), fs::path("runs/a"));
}

TEST(Generate, WritesDatasetAndProfile) {
  TempDir tmp;
  std::ostringstream log;
  const GenerateResult r = cmd_generate(tiny(tmp.path()), log);
  EXPECT_DOUBLE_EQ(r.realized_ratio, 5.0);
  EXPECT_NE(log.str().find("realized imbalance ratio: 5.0000"), std::string::npos);
  const Dataset ds = load_dataset_file(r.dataset_path.string());
  EXPECT_EQ(ds.train_counts(), build_profile(6, 30, 5.0).counts);
  EXPECT_EQ(profile_counts_from_json(nlohmann::json::parse(read_file(r.profile_path))), ds.train_counts());
}

TEST(Run, WritesOneReportAndTracePerSeed) {
  TempDir tmp;
  std::ostringstream log;
  ASSERT_EQ(cmd_run(tiny(tmp.path()), log), kExitOk);
  for (const char* seed : {"1", "2"}) {
    for (const std::string stem : {"report_seed", "trace_seed", "model_seed", "state_seed", "gradnorm_seed"}) {
      const std::string ext = stem == "report_seed" || stem == "state_seed" ? ".json"
                              : stem == "trace_seed"                        ? ".csv"
                              : stem == "model_seed"                        ? ".bin"
                                                                            : ".svg";
      EXPECT_TRUE(fs::exists(tmp.path() / (stem + seed + ext))) << stem << seed << ext;
    }
  }
  const auto report = nlohmann::json::parse(read_file(tmp.path() / "report_seed1.json")).get<MetricsReport>();
  EXPECT_EQ(report.metadata.config_hash, config_hash(tiny(tmp.path())));
  std::ifstream trace(tmp.path() / "trace_seed1.csv");
  EXPECT_EQ(read_trace_csv(trace), report.grad_trace);
  std::ifstream model(tmp.path() / "model_seed1.bin", std::ios::binary);
  EXPECT_EQ(load_model(model).output_dim(), 6u);
  EXPECT_EQ(parse_config_text(read_file(tmp.path() / "config.txt")).seeds, (std::vector<std::uint64_t>{1, 2}));
}

TEST(Run, NonFiniteTrainingReturnsRuntimeErrorWithDiagnostic) {
  TempDir tmp;
  ExperimentConfig c = tiny(tmp.path());
  c.train.base_lr = 1e300;
  std::ostringstream log;
  EXPECT_EQ(cmd_run(c, log), kExitRuntime);
  EXPECT_TRUE(fs::exists(tmp.path() / "diagnostic_seed1.json"));
  EXPECT_FALSE(fs::exists(tmp.path() / "report_seed1.json"));
}

TEST(Ablate, PartialFailureKeepsTheOtherCells) {
  TempDir tmp;
  ExperimentConfig c = tiny(tmp.path());
  c.seeds = {1};
  c.train.schedule.fixed_lambda = 1e300;  // only the fixed row reads it
  c.ablate_schedules = {ScheduleType::Fixed, ScheduleType::EntropySigmoid};
  std::ostringstream log;
  EXPECT_EQ(cmd_ablate(c, 2, log), kExitPartial);
  const std::string table = read_file(tmp.path() / "ablation_table.csv");
  EXPECT_EQ(table.rfind("variant,shuffled_N2\nfixed,\nentropy_sigmoid,0.", 0), 0u) << table;
  const std::string failures = read_file(tmp.path() / "ablation_failures.txt");
  EXPECT_EQ(failures.rfind("fixed / shuffled_N2 / seed 1:", 0), 0u) << failures;
  EXPECT_TRUE(fs::exists(tmp.path() / "cells" / "entropy_sigmoid" / "shuffled_N2" / "report_seed1.json"));
}

TEST(Ablate, ParallelMatchesSerial) {
  TempDir tmp;
  ExperimentConfig c = tiny(tmp.path() / "serial");
  c.ablate_schedules = {ScheduleType::Fixed, ScheduleType::Sigmoid};
  c.ablate_num_tasks = {1, 2};
  std::ostringstream log;
  const AblationOutcome serial = run_ablation(make_ablation_grid(c), 1, log);
  c.output_dir = (tmp.path() / "parallel").string();
  const AblationOutcome parallel = run_ablation(make_ablation_grid(c), 3, log);
  EXPECT_TRUE(serial.failures.empty());
  EXPECT_EQ(serial.medians, parallel.medians);
  EXPECT_EQ(read_file(tmp.path() / "serial" / "ablation_table.csv"),
            read_file(tmp.path() / "parallel" / "ablation_table.csv"));
}

TEST(Report, SummarizesStoredReportsWithoutRetraining) {
  TempDir tmp;
  std::ostringstream log;
  ASSERT_EQ(cmd_run(tiny(tmp.path() / "run"), log), kExitOk);
  ASSERT_EQ(cmd_report(tmp.path() / "run", tmp.path() / "summary", log), kExitOk);
  const std::string csv = read_file(tmp.path() / "summary" / "summary.csv");
  std::istringstream is(csv);
  std::string header, row1, row2, extra;
  std::getline(is, header);
  std::getline(is, row1);
  std::getline(is, row2);
  EXPECT_FALSE(std::getline(is, extra));
  EXPECT_EQ(header.rfind("report,seed,schedule,gcr,reweighting,protocol,num_tasks,overall_accuracy", 0), 0u);
  EXPECT_EQ(row1.rfind("report_seed1.json,1,entropy_sigmoid,true,true,shuffled,2,", 0), 0u) << row1;
  const std::string svg = read_file(tmp.path() / "summary" / "gradnorm.svg");
  EXPECT_NE(svg.find("task-boundary"), std::string::npos);
  EXPECT_EQ(read_figure_data(tmp.path() / "summary" / "gradnorm.csv").size(), 2u);

  fs::create_directories(tmp.path() / "empty");
  EXPECT_EQ(cmd_report(tmp.path() / "empty", tmp.path() / "empty", log), kExitRuntime);
  EXPECT_THROW(cmd_report(tmp.path() / "missing", tmp.path(), log), IoError);
}

TEST(Cli, ExitCodes) {
  TempDir tmp;
  const std::string root = "LTCIL_OUTPUT_ROOT=" + tmp.path().string() + " ";
  const std::string small = "-s num_classes=6 -s input_dim=4 -s n_max=30 -s rho=5 -s test_per_class=4 -s num_tasks=2 "
                            "-s epochs_per_task=2 -s lr_milestones= -s hidden_dims=8 -s seeds=3 ";
  EXPECT_EQ(run_cli(""), kExitConfig);
  EXPECT_EQ(run_cli("frobnicate"), kExitConfig);
  EXPECT_EQ(run_cli("--help"), kExitOk);
  EXPECT_EQ(run_cli("-s no_such_key=1 run"), kExitConfig);
  EXPECT_EQ(run_cli("-s rho=0.5 generate"), kExitConfig);
  EXPECT_EQ(run_cli("-c " + (tmp.path() / "absent.cfg").string() + " run"), kExitConfig);

  EXPECT_EQ(std::system((root + LTCIL_CLI_PATH + " " + small + "-s output_dir=gen generate > /dev/null").c_str()), 0);
  EXPECT_TRUE(fs::exists(tmp.path() / "gen" / "dataset.csv"));
  EXPECT_EQ(std::system((root + LTCIL_CLI_PATH + " " + small + "-s output_dir=run run > /dev/null").c_str()), 0);
  EXPECT_TRUE(fs::exists(tmp.path() / "run" / "report_seed3.json"));
  EXPECT_EQ(run_cli(small + "-s base_lr=1e300 -s output_dir=" + (tmp.path() / "nan").string() + " run"), kExitRuntime);
  EXPECT_EQ(run_cli("report " + (tmp.path() / "run").string()), kExitOk);
  EXPECT_TRUE(fs::exists(tmp.path() / "run" / "summary.csv"));
  EXPECT_EQ(run_cli("report " + (tmp.path() / "gen").string()), kExitRuntime);
  EXPECT_EQ(run_cli(small + "-s fixed_lambda=1e300 -s ablate_schedules=fixed,sigmoid -s output_dir=" +
                    (tmp.path() / "abl").string() + " ablate -j 2"),
            kExitPartial);
}
