// Evaluation rows, their CSV form, and the cross-run report (markdown table
// plus an SVG line plot of mAP against eps_av).

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace avasd {

// One evaluated cell. attack_method is "none" for the clean row and carries a
// "-transfer" suffix for black-box rows crafted on the substitute.
struct EvalRow {
  std::string model;
  std::string loss_mode;
  std::string attack_method;
  std::string scenario;
  std::string modality;
  double eps_av = 0.0;
  double map = 0.0;
  std::optional<double> ecr_a, ecr_v;
  std::uint64_t seed = 0;
};

inline constexpr const char* kEvalCsvHeader =
    "model,loss-mode,attack-method,scenario,modality,eps_av,map,ecr_a,ecr_v,seed";

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string eval_csv(std::span<const EvalRow> rows);
std::vector<EvalRow> parse_eval_csv(const std::string& text, const std::string& origin);

// Shortest round-trip decimal form used in every emitted number.
std::string format_number(double v);

// Rows sharing everything but the seed, averaged.
struct AggregateRow {
  std::string model, loss_mode, attack_method, scenario, modality;
  double eps_av = 0.0;
  double map_mean = 0.0, map_sd = 0.0;
  std::optional<double> ecr_a, ecr_v;  // means
  int seeds = 0;
};

// Groups keep the order in which their first row appears.
std::vector<AggregateRow> aggregate(std::span<const EvalRow> rows);

std::string markdown_report(std::span<const AggregateRow> rows);

// mAP against eps_av, one polyline per (model, method, scenario, modality).
std::string svg_plot(std::span<const AggregateRow> rows);

}  // namespace avasd
