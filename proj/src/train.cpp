#include "avasd/train.hpp"

#include "avasd/rng.hpp"

#include <array>
#include <cmath>
#include <numeric>
#include <string>

namespace avasd {

std::string_view to_string(LossMode m) {
  switch (m) {
    case LossMode::kCeOnly: return "ce";
    case LossMode::kCePlusAvil: return "avil";
    case LossMode::kAdversarial: return "adversarial";
    case LossMode::kAvilAdversarial: return "avil-adversarial";
  }
  return "?";
}

LossMode loss_mode_from_string(std::string_view s) {
  for (LossMode m : {LossMode::kCeOnly, LossMode::kCePlusAvil, LossMode::kAdversarial,
                     LossMode::kAvilAdversarial}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown loss mode '" + std::string(s) + "'");
}

std::string_view to_string(AdversarialRefresh r) {
  switch (r) {
    case AdversarialRefresh::kOnline: return "online";
    case AdversarialRefresh::kEpoch: return "epoch";
    case AdversarialRefresh::kStatic: return "static";
  }
  return "?";
}

AdversarialRefresh adversarial_refresh_from_string(std::string_view s) {
  if (s == "online") return AdversarialRefresh::kOnline;
  if (s == "epoch") return AdversarialRefresh::kEpoch;
  if (s == "static") return AdversarialRefresh::kStatic;
  throw std::invalid_argument("unknown adversarial refresh '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be positive");
  }
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (max_grad_norm < 0.0) throw std::invalid_argument("max_grad_norm must be non-negative");
  avil.validate();
  if (uses_adversarial(mode)) {
    adversarial.validate();
    if (refresh == AdversarialRefresh::kStatic && adversarial_source == nullptr) {
      throw std::invalid_argument("static adversarial refresh needs a source model");
    }
  }
}

ModelParams<float> make_model(std::span<const AVSample> samples, const ModelDims& dims,
                              std::uint64_t seed, bool cross_attention) {
  auto params = init_params<float>(dims, seed, cross_attention);
  if (!samples.empty()) set_standardization(params, stack_audio(samples), stack_video(samples));
  return params;
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  return order;
}

}  // namespace

TrainResult train(ModelParams<float> params, std::span<const AVSample> samples,
                  const TrainConfig& config) {
  config.validate();
  if (samples.empty()) throw std::invalid_argument("train: empty dataset");

  std::array<ad::Matrix<float>, kParamCount> velocity;
  for (int p = 0; p < kParamCount; ++p) {
    velocity[p] = ad::Matrix<float>::Zero(params.blocks[p].rows(), params.blocks[p].cols());
  }

  // Static copies: one per sample, crafted against the source model.
  std::vector<AdversarialPair<float>> fixed;
  if (uses_adversarial(config.mode) && config.refresh == AdversarialRefresh::kStatic) {
    if (config.adversarial_source->dims != params.dims) {
      throw ad::ShapeError("adversarial source model takes different input shapes");
    }
    fixed.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      AttackConfig cfg = config.adversarial;
      cfg.seed = derive_seed(config.seed, i);
      fixed.push_back(run_attack(*config.adversarial_source, samples[i].audio, samples[i].video,
                                 samples[i].labels, cfg));
    }
  }

  TrainResult result;
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(config.seed, static_cast<std::uint64_t>(epoch));
    Rng rng(epoch_seed);
    const auto order = shuffled(samples.size(), rng);
    if (uses_adversarial(config.mode) && config.refresh == AdversarialRefresh::kEpoch) {
      fixed.clear();
      for (std::size_t i = 0; i < samples.size(); ++i) {
        AttackConfig cfg = config.adversarial;
        cfg.seed = derive_seed(epoch_seed, i);
        fixed.push_back(run_attack(params, samples[i].audio, samples[i].video, samples[i].labels,
                                   cfg));
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<ad::Matrix<float>> audio, video;
      std::vector<std::vector<int>> labels;
      for (std::size_t k = start; k < end; ++k) {
        const AVSample& s = samples[order[k]];
        audio.push_back(s.audio);
        video.push_back(s.video);
        labels.push_back(s.labels);
      }
      if (uses_adversarial(config.mode)) {
        for (std::size_t k = start; k < end; ++k) {
          const AVSample& s = samples[order[k]];
          if (!fixed.empty()) {
            audio.push_back(fixed[order[k]].x_a);
            video.push_back(fixed[order[k]].x_v);
          } else {
            AttackConfig cfg = config.adversarial;
            cfg.seed = derive_seed(epoch_seed, order[k]);
            auto pair = run_attack(params, s.audio, s.video, s.labels, cfg);
            audio.push_back(std::move(pair.x_a));
            video.push_back(std::move(pair.x_v));
          }
          labels.push_back(s.labels);
        }
      }

      auto g = batch_gradient<float>(params, audio, video, labels, config.mode, config.avil,
                                     config.avil_source);
      if (!std::isfinite(g.loss)) {
        throw TrainingDiverged("training loss became non-finite at epoch " +
                               std::to_string(epoch) + ", batch " + std::to_string(batches));
      }

      double sq = 0.0;
      for (const auto& gp : g.grads) sq += gp.cast<double>().squaredNorm();
      if (!std::isfinite(sq)) {
        throw TrainingDiverged("non-finite gradient at epoch " + std::to_string(epoch));
      }
      const double norm = std::sqrt(sq);
      const float clip = config.max_grad_norm > 0.0 && norm > config.max_grad_norm
                             ? static_cast<float>(config.max_grad_norm / norm)
                             : 1.0f;
      for (int p = 0; p < kParamCount; ++p) {
        if (!is_trainable(static_cast<Param>(p))) continue;
        velocity[p] = static_cast<float>(config.momentum) * velocity[p] + clip * g.grads[p];
        params.blocks[p] -= static_cast<float>(config.learning_rate) * velocity[p];
      }

      stats.loss += g.loss;
      stats.ce += g.ce;
      stats.avil_skipped += g.avil_skipped;
      ++batches;
    }
    stats.loss /= static_cast<double>(batches);
    stats.ce /= static_cast<double>(batches);
    result.curve.push_back(stats);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace avasd
