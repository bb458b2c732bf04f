// Mini-batch SGD with momentum for the toy detector.

#pragma once

#include "avasd/attack.hpp"
#include "avasd/avil.hpp"
#include "avasd/data.hpp"
#include "avasd/model.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace avasd {

enum class LossMode {
  kCeOnly,            // L_CE_all
  kCePlusAvil,        // L_CE_all + sum_j lambda_j L_j
  kAdversarial,       // L_CE_all on clean + adversarial copies (1:1 per batch)
  kAvilAdversarial,   // both of the above
};

std::string_view to_string(LossMode m);
LossMode loss_mode_from_string(std::string_view s);

inline bool uses_avil(LossMode m) {
  return m == LossMode::kCePlusAvil || m == LossMode::kAvilAdversarial;
}
inline bool uses_adversarial(LossMode m) {
  return m == LossMode::kAdversarial || m == LossMode::kAvilAdversarial;
}

// Where adversarial copies come from. Online copies are re-crafted against the
// current parameters for every batch; epoch copies are re-crafted against the
// parameters at the start of every epoch; static copies are crafted once,
// before training, against a fixed source model.
enum class AdversarialRefresh { kOnline, kEpoch, kStatic };

std::string_view to_string(AdversarialRefresh r);
AdversarialRefresh adversarial_refresh_from_string(std::string_view s);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double max_grad_norm = 5.0;  // global-norm clipping; 0 disables
  std::uint64_t seed = 1;
  LossMode mode = LossMode::kCeOnly;
  AvilWeights avil;
  AvilSource avil_source = AvilSource::kFrontEnd;
  // Generator of adversarial copies.
  AttackConfig adversarial = [] {
    AttackConfig a;
    a.method = AttackMethod::kBim;
    return a;
  }();
  AdversarialRefresh refresh = AdversarialRefresh::kOnline;
  // Required for static refresh; ignored otherwise.
  const ModelParams<float>* adversarial_source = nullptr;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;      // mean batch objective
  double ce = 0.0;        // mean batch L_CE_all
  int avil_skipped = 0;   // interaction-loss terms dropped for empty classes
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<EpochStats> curve;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fresh parameters with input standardization fitted to `samples`.
ModelParams<float> make_model(std::span<const AVSample> samples, const ModelDims& dims,
                              std::uint64_t seed, bool cross_attention = true);

TrainResult train(ModelParams<float> params, std::span<const AVSample> samples,
                  const TrainConfig& config);

// Objective and per-parameter gradients of one batch (clean samples only);
// exposed for gradient checks.
template <typename Scalar>
struct BatchGradient {
  double loss = 0.0;
  double ce = 0.0;
  int avil_skipped = 0;
  std::array<ad::Matrix<Scalar>, kParamCount> grads;
};

template <typename Scalar>
BatchGradient<Scalar> batch_gradient(const ModelParams<Scalar>& params,
                                     std::span<const ad::Matrix<Scalar>> audio,
                                     std::span<const ad::Matrix<Scalar>> video,
                                     std::span<const std::vector<int>> labels, LossMode mode,
                                     const AvilWeights& weights, AvilSource source) {
  ad::Tape<Scalar> tape;
  const auto bound = bind(tape, params, /*trainable=*/true);
  std::vector<ad::Var<Scalar>> ce_terms, e_a, e_v;
  std::vector<int> batch_labels;
  for (std::size_t i = 0; i < audio.size(); ++i) {
    const auto tr = forward(bound, tape.constant(audio[i]), tape.constant(video[i]));
    ce_terms.push_back(combined_ce_loss(tr, labels[i]));
    const bool front = source == AvilSource::kFrontEnd;
    e_a.push_back(front ? tr.e_a : tr.z_a);
    e_v.push_back(front ? tr.e_v : tr.z_v);
    batch_labels.insert(batch_labels.end(), labels[i].begin(), labels[i].end());
  }
  const auto ce = ad::mean(ad::concat_rows<Scalar>(ce_terms));
  auto loss = ce;
  BatchGradient<Scalar> out;
  if (uses_avil(mode)) {
    const auto terms = avil_terms(ad::concat_rows<Scalar>(e_a), ad::concat_rows<Scalar>(e_v),
                                  std::span<const int>(batch_labels));
    out.avil_skipped = terms.skipped();
    loss = ce + avil_penalty(tape, terms, weights);
  }
  tape.backward(loss);
  out.loss = static_cast<double>(loss.item());
  out.ce = static_cast<double>(ce.item());
  for (int p = 0; p < kParamCount; ++p) {
    out.grads[p] = is_trainable(static_cast<Param>(p))
                       ? bound.vars[p].grad()
                       : ad::Matrix<Scalar>::Zero(params.blocks[p].rows(), params.blocks[p].cols());
  }
  return out;
}

}  // namespace avasd
