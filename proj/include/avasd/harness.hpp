// Subcommands behind the avasd executable and the run-directory layout they
// share:
//
//   <run>/config.resolved        every key, defaults filled in
//   <run>/data/train.jsonl, test.jsonl
//   <run>/checkpoint.bin, loss_curve.csv
//   <run>/substitute.bin, substitute_loss_curve.csv   (substitute.enabled)
//   <run>/attacks/<cell>.jsonl    perturbations and objective traces
//   <run>/reports/eval.json, eval.csv

#pragma once

#include "avasd/config.hpp"

#include <exception>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>

namespace avasd {

class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,        // bad flags or config
  kExitMissingInput = 3, // an upstream artifact is absent
  kExitDiverged = 4,     // training produced a non-finite loss
  kExitBadInput = 5,     // an artifact exists but cannot be parsed
};

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.resolved"; }
  std::filesystem::path train_data() const { return root / "data" / "train.jsonl"; }
  std::filesystem::path test_data() const { return root / "data" / "test.jsonl"; }
  std::filesystem::path checkpoint() const { return root / "checkpoint.bin"; }
  std::filesystem::path loss_curve() const { return root / "loss_curve.csv"; }
  std::filesystem::path substitute() const { return root / "substitute.bin"; }
  std::filesystem::path substitute_curve() const { return root / "substitute_loss_curve.csv"; }
  std::filesystem::path attacks() const { return root / "attacks"; }
  std::filesystem::path eval_json() const { return root / "reports" / "eval.json"; }
  std::filesystem::path eval_csv() const { return root / "reports" / "eval.csv"; }
};

// Output directory: config.out, else $AVASD_OUT_ROOT/<model.name>, else
// runs/<model.name>.
std::filesystem::path run_directory(const ExperimentConfig& config);

// Each command resolves `config`, records it in the run directory (refusing a
// directory that already holds a different experiment), and writes its
// artifacts.
void cmd_gen(ExperimentConfig config);
void cmd_train(ExperimentConfig config);
void cmd_attack(ExperimentConfig config);
void cmd_eval(ExperimentConfig config);

// Aggregates reports/eval.csv of every run into <out>/report.md and
// <out>/map_vs_eps.svg.
void cmd_report(std::span<const std::filesystem::path> runs, const std::filesystem::path& out);

int exit_code_for(const std::exception& e);

// One-line JSON error record: {"error": kind, "exit_code": n, "message": ...}.
std::string error_record(const std::exception& e);

}  // namespace avasd
