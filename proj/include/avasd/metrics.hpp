// Frame-level average precision, embedding change ratio, and the evaluation
// loop that attacks a dataset and scores it with the audio-visual head.

#pragma once

#include "avasd/attack.hpp"
#include "avasd/data.hpp"
#include "avasd/model.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace avasd {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-interpolated AP over the descending-score ranking: the mean of the
// precision at the rank of every positive. Ties keep their original order.
double average_precision(std::span<const double> scores, std::span<const int> labels);

struct EcrResult {
  double ratio = 0.0;
  std::size_t rows_used = 0;
  std::size_t rows_skipped = 0;  // clean rows with norm <= 1e-8
};

// Mean over rows of |z_clean - z_adv| / |z_clean|.
EcrResult ecr(const ad::Matrix<float>& z_clean, const ad::Matrix<float>& z_adv);

struct SampleTrace {
  std::size_t index = 0;  // position in the evaluated dataset
  std::vector<double> scores;
  std::vector<int> labels;
};

struct EvalReport {
  double map = 0.0;
  std::optional<double> ecr_a, ecr_v;
  std::size_t samples = 0;
  std::size_t frames = 0;
  std::size_t ecr_rows_skipped = 0;
  std::vector<SampleTrace> traces;
  std::string fingerprint;
};

struct EvalOptions {
  int jobs = 1;
  // Model used to craft perturbations; defaults to the evaluated model
  // (white-box). A different model gives a transfer (black-box) attack.
  const ModelParams<float>* crafting_model = nullptr;
};

// Scores every sample (attacked first when `attack` is set) with the
// audio-visual head and reports global frame-level AP. PGD/MIM/BIM seeds are
// derived per sample from attack->seed and the sample position.
EvalReport evaluate(const ModelParams<float>& params, std::span<const AVSample> samples,
                    const std::optional<AttackConfig>& attack, const EvalOptions& options = {});

// Black-box evaluation: perturbations crafted on `substitute`, scored on `target`.
EvalReport transfer_attack(const ModelParams<float>& substitute,
                           const ModelParams<float>& target, std::span<const AVSample> samples,
                           const AttackConfig& attack, int jobs = 1);

// Audio-visual head scores of one clean sample.
std::vector<double> predict(const ModelParams<float>& params, const AVSample& sample);

double frame_accuracy(const ModelParams<float>& params, std::span<const AVSample> samples);

// Indices of samples whose every frame is classified correctly (score >= 0.5
// iff label 1) by every listed model.
std::vector<std::size_t> correctly_predicted(std::span<const ModelParams<float>* const> models,
                                             std::span<const AVSample> samples, int jobs = 1);

std::vector<AVSample> select(std::span<const AVSample> samples,
                             std::span<const std::size_t> indices);

// Stable hash of a parameter set (bit patterns of every block).
std::uint64_t params_hash(const ModelParams<float>& params);

}  // namespace avasd
