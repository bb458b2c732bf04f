// avasd: generate data, train, attack, evaluate and report.

#include "avasd/harness.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> jobs;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "Experiment config (INI)");
    app->add_option("--seed", seed, "Global seed; overrides run.seed");
    app->add_option("--out", out, "Run directory; overrides run.out");
    app->add_option("--jobs", jobs, "Worker threads (0 = all cores)");
  }

  avasd::ExperimentConfig load() const {
    avasd::ExperimentConfig c;
    if (!config_path.empty()) {
      if (!std::filesystem::exists(config_path)) {
        throw avasd::MissingInput("missing config " + config_path);
      }
      c = avasd::load_config(config_path);
    }
    if (seed) c.seed = *seed;
    if (!out.empty()) c.out = out;
    if (jobs) c.jobs = *jobs;
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial robustness lab for a toy audio-visual speaker detector"};
  app.require_subcommand(1);

  Common common;
  auto* gen = app.add_subcommand("gen", "Generate train/test datasets");
  auto* train = app.add_subcommand("train", "Train the model (and substitute)");
  auto* attack = app.add_subcommand("attack", "Archive perturbations for every attack cell");
  auto* eval = app.add_subcommand("eval", "Evaluate clean and attacked mAP/ECR");
  auto* run = app.add_subcommand("run", "gen, train, attack and eval in one go");
  for (auto* sub : {gen, train, attack, eval, run}) common.attach(sub);

  std::vector<std::string> runs;
  std::string report_out = ".";
  auto* report = app.add_subcommand("report", "Markdown table and SVG plot over run directories");
  report->add_option("runs", runs, "Run directories")->required();
  report->add_option("--out", report_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : avasd::kExitUsage;
  }

  try {
    if (*report) {
      std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
      avasd::cmd_report(dirs, report_out);
      return avasd::kExitOk;
    }
    const auto config = common.load();
    if (*gen || *run) avasd::cmd_gen(config);
    if (*train || *run) avasd::cmd_train(config);
    if (*attack || *run) avasd::cmd_attack(config);
    if (*eval || *run) avasd::cmd_eval(config);
  } catch (const std::exception& e) {
    std::cerr << avasd::error_record(e) << '\n';
    return avasd::exit_code_for(e);
  }
  return avasd::kExitOk;
}
