// Joint audio-visual l-infinity attacks (BIM, MIM, PGD).
//
// Both modalities are perturbed from one backward pass per iteration. The
// master budget eps_av maps to eps_a = eps_av * 1e-4 and eps_v = eps_av * 1e-1;
// a masked-off modality has budget zero and its input is returned untouched.

#pragma once

#include "avasd/model.hpp"
#include "avasd/rng.hpp"
#include "avasd/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace avasd {

enum class AttackMethod { kBim, kMim, kPgd };
enum class Modality { kAudio, kVisual, kBoth };
enum class Scenario { kTrainingAware, kInferenceAware };

std::string_view to_string(AttackMethod m);
std::string_view to_string(Modality m);
std::string_view to_string(Scenario s);
AttackMethod attack_method_from_string(std::string_view s);
Modality modality_from_string(std::string_view s);
Scenario scenario_from_string(std::string_view s);

inline constexpr double kAudioBudgetScale = 1e-4;
inline constexpr double kVisualBudgetScale = 1e-1;

class AttackError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AttackConfig {
  AttackMethod method = AttackMethod::kPgd;
  double eps_av = 5.0;
  int steps = 10;
  // Absolute per-modality step sizes; unset means 2.5 * eps / steps (capped at eps).
  std::optional<double> step_a, step_v;
  double momentum = 1.0;  // MIM decay
  int restarts = 3;       // PGD candidates
  bool zero_init = false; // PGD: start every candidate at delta = 0
  Modality modality = Modality::kBoth;
  Scenario scenario = Scenario::kTrainingAware;
  bool clamp_visual = false;  // keep perturbed visual features in [0, 1]
  std::uint64_t seed = 0;

  double eps_a() const {
    return modality == Modality::kVisual ? 0.0 : eps_av * kAudioBudgetScale;
  }
  double eps_v() const {
    return modality == Modality::kAudio ? 0.0 : eps_av * kVisualBudgetScale;
  }
  double alpha_a() const { return step_for(step_a, eps_a()); }
  double alpha_v() const { return step_for(step_v, eps_v()); }

  void validate() const;

  // Stable textual identity of every field, used in report fingerprints.
  std::string fingerprint() const;

 private:
  double step_for(const std::optional<double>& explicit_step, double eps) const {
    if (explicit_step) return *explicit_step;
    return steps > 0 ? std::min(2.5 * eps / steps, eps) : 0.0;
  }
};

template <typename Scalar>
struct AdversarialPair {
  using Mat = ad::Matrix<Scalar>;
  Mat x_a, x_v;          // perturbed inputs, x + delta
  Mat delta_a, delta_v;  // perturbations
  std::vector<double> objective_trace;  // loss at each iterate before its step
  double final_loss = 0.0;              // loss at the returned inputs
  std::vector<double> candidate_losses; // PGD: final loss of every restart
};

// Loss of an input pair, built on the given tape.
template <typename Scalar>
using Objective = std::function<ad::Var<Scalar>(ad::Tape<Scalar>&, const ad::Var<Scalar>& x_a,
                                                const ad::Var<Scalar>& x_v)>;

template <typename Scalar>
struct InputGradient {
  ad::Matrix<Scalar> grad_a, grad_v;
  double loss = 0.0;
};

// (dL/dx_a, dL/dx_v) for an objective whose parameters are held constant.
template <typename Scalar>
InputGradient<Scalar> grad_wrt_input(const Objective<Scalar>& objective,
                                     const ad::Matrix<Scalar>& x_a,
                                     const ad::Matrix<Scalar>& x_v) {
  ad::Tape<Scalar> tape;
  const auto va = tape.variable(x_a);
  const auto vv = tape.variable(x_v);
  const auto loss = objective(tape, va, vv);
  if (loss.tape() != &tape) throw ad::TapeError("objective built its loss on a foreign tape");
  tape.backward(loss);
  return {va.grad(), vv.grad(), static_cast<double>(loss.item())};
}

template <typename Scalar>
double evaluate_objective(const Objective<Scalar>& objective, const ad::Matrix<Scalar>& x_a,
                          const ad::Matrix<Scalar>& x_v) {
  ad::Tape<Scalar> tape;
  return static_cast<double>(objective(tape, tape.constant(x_a), tape.constant(x_v)).item());
}

// Inference-aware attackers maximize the audio-visual head loss; training-aware
// attackers maximize the full three-head training loss.
template <typename Scalar>
ad::Var<Scalar> scenario_loss(const ForwardTrace<Scalar>& tr, std::span<const int> labels,
                              Scenario scenario) {
  return scenario == Scenario::kInferenceAware ? head_loss(tr.logit_av, labels)
                                               : combined_ce_loss(tr, labels);
}

template <typename Scalar>
Objective<Scalar> model_objective(const ModelParams<Scalar>& params, std::span<const int> labels,
                                  Scenario scenario) {
  return [&params, labels, scenario](ad::Tape<Scalar>& tape, const ad::Var<Scalar>& x_a,
                                     const ad::Var<Scalar>& x_v) {
    const auto bound = bind(tape, params, /*trainable=*/false);
    return scenario_loss(forward(bound, x_a, x_v), labels, scenario);
  };
}

template <typename Scalar>
double attack_objective(const ModelParams<Scalar>& params, const ad::Matrix<Scalar>& x_a,
                        const ad::Matrix<Scalar>& x_v, std::span<const int> labels,
                        Scenario scenario) {
  return evaluate_objective(model_objective(params, labels, scenario), x_a, x_v);
}

namespace detail {

template <typename Scalar>
struct Budget {
  Scalar eps_a, eps_v, alpha_a, alpha_v;
};

template <typename Scalar>
Budget<Scalar> budget_of(const AttackConfig& cfg) {
  return {static_cast<Scalar>(cfg.eps_a()), static_cast<Scalar>(cfg.eps_v()),
          static_cast<Scalar>(cfg.alpha_a()), static_cast<Scalar>(cfg.alpha_v())};
}

template <typename Scalar>
Scalar sign(Scalar x) {
  return static_cast<Scalar>((x > Scalar(0)) - (x < Scalar(0)));
}

template <typename Scalar>
ad::Matrix<Scalar> perturbed(const ad::Matrix<Scalar>& x, const ad::Matrix<Scalar>& delta,
                             Scalar eps) {
  if (eps == Scalar(0)) return x;
  return x + delta;
}

template <typename Scalar>
void check_finite(const ad::Matrix<Scalar>& g, const char* what) {
  if (!g.allFinite()) throw AttackError(std::string("non-finite ") + what + " gradient");
}

// One candidate: M signed-gradient steps from delta0, clipped to the budget.
// With momentum, the velocity g = mu g + grad / |grad|_1 drives the sign.
template <typename Scalar>
AdversarialPair<Scalar> iterate(const Objective<Scalar>& objective, const ad::Matrix<Scalar>& x_a,
                                const ad::Matrix<Scalar>& x_v, ad::Matrix<Scalar> delta_a,
                                ad::Matrix<Scalar> delta_v, const AttackConfig& cfg,
                                std::optional<double> momentum) {
  using Mat = ad::Matrix<Scalar>;
  const auto b = budget_of<Scalar>(cfg);
  Mat velocity_a = Mat::Zero(x_a.rows(), x_a.cols());
  Mat velocity_v = Mat::Zero(x_v.rows(), x_v.cols());

  auto project_visual = [&](Mat& dv) {
    if (cfg.clamp_visual) {
      dv = dv.cwiseMax(-x_v).cwiseMin(Mat::Ones(x_v.rows(), x_v.cols()) - x_v);
    }
  };
  if (b.eps_v > Scalar(0)) project_visual(delta_v);

  AdversarialPair<Scalar> out;
  for (int m = 0; m < cfg.steps; ++m) {
    const auto g = grad_wrt_input(objective, perturbed(x_a, delta_a, b.eps_a),
                                  perturbed(x_v, delta_v, b.eps_v));
    if (!std::isfinite(g.loss)) throw AttackError("non-finite attack objective");
    out.objective_trace.push_back(g.loss);
    auto step = [&](const Mat& grad, Mat& velocity, Mat& delta, Scalar eps, Scalar alpha,
                    const char* what) {
      if (eps == Scalar(0)) return;
      check_finite(grad, what);
      const Mat* direction = &grad;
      if (momentum) {
        const double l1 = grad.template cast<double>().cwiseAbs().sum();
        velocity *= static_cast<Scalar>(*momentum);
        if (l1 > 0.0) velocity += grad / static_cast<Scalar>(l1);
        direction = &velocity;
      }
      delta = (delta + alpha * direction->unaryExpr([](Scalar x) { return sign(x); }))
                  .cwiseMax(-eps)
                  .cwiseMin(eps);
    };
    step(g.grad_a, velocity_a, delta_a, b.eps_a, b.alpha_a, "audio");
    step(g.grad_v, velocity_v, delta_v, b.eps_v, b.alpha_v, "visual");
    if (b.eps_v > Scalar(0)) project_visual(delta_v);
  }
  out.x_a = perturbed(x_a, delta_a, b.eps_a);
  out.x_v = perturbed(x_v, delta_v, b.eps_v);
  out.delta_a = std::move(delta_a);
  out.delta_v = std::move(delta_v);
  out.final_loss = evaluate_objective(objective, out.x_a, out.x_v);
  if (!std::isfinite(out.final_loss)) throw AttackError("non-finite attack objective");
  return out;
}

template <typename Scalar>
void check_inputs(const ad::Matrix<Scalar>& x_a, const ad::Matrix<Scalar>& x_v) {
  if (x_a.rows() != x_v.rows()) {
    throw ad::ShapeError("attack: audio has " + std::to_string(x_a.rows()) +
                         " frames, video has " + std::to_string(x_v.rows()));
  }
}

}  // namespace detail

template <typename Scalar>
AdversarialPair<Scalar> bim(const Objective<Scalar>& objective, const ad::Matrix<Scalar>& x_a,
                            const ad::Matrix<Scalar>& x_v, const AttackConfig& cfg) {
  cfg.validate();
  detail::check_inputs(x_a, x_v);
  using Mat = ad::Matrix<Scalar>;
  return detail::iterate<Scalar>(objective, x_a, x_v, Mat::Zero(x_a.rows(), x_a.cols()),
                                 Mat::Zero(x_v.rows(), x_v.cols()), cfg, std::nullopt);
}

template <typename Scalar>
AdversarialPair<Scalar> mim(const Objective<Scalar>& objective, const ad::Matrix<Scalar>& x_a,
                            const ad::Matrix<Scalar>& x_v, const AttackConfig& cfg) {
  cfg.validate();
  detail::check_inputs(x_a, x_v);
  using Mat = ad::Matrix<Scalar>;
  return detail::iterate<Scalar>(objective, x_a, x_v, Mat::Zero(x_a.rows(), x_a.cols()),
                                 Mat::Zero(x_v.rows(), x_v.cols()), cfg, cfg.momentum);
}

// Best of `restarts` BIM runs, each from delta0 ~ U(-eps, eps) per modality.
template <typename Scalar>
AdversarialPair<Scalar> pgd(const Objective<Scalar>& objective, const ad::Matrix<Scalar>& x_a,
                            const ad::Matrix<Scalar>& x_v, const AttackConfig& cfg) {
  cfg.validate();
  detail::check_inputs(x_a, x_v);
  using Mat = ad::Matrix<Scalar>;
  const double eps_a = cfg.eps_a(), eps_v = cfg.eps_v();
  std::optional<AdversarialPair<Scalar>> best;
  std::vector<double> losses;
  for (int r = 0; r < cfg.restarts; ++r) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    auto init = [&](const Mat& x, double eps) {
      Mat d = Mat::Zero(x.rows(), x.cols());
      if (cfg.zero_init || eps == 0.0) return d;
      for (ad::Index i = 0; i < d.size(); ++i) {
        d.data()[i] = static_cast<Scalar>(rng.uniform(-eps, eps));
      }
      return d;
    };
    Mat da = init(x_a, eps_a);
    Mat dv = init(x_v, eps_v);
    auto candidate = detail::iterate<Scalar>(objective, x_a, x_v, std::move(da), std::move(dv),
                                             cfg, std::nullopt);
    losses.push_back(candidate.final_loss);
    if (!best || candidate.final_loss > best->final_loss) best = std::move(candidate);
  }
  best->candidate_losses = std::move(losses);
  return std::move(*best);
}

template <typename Scalar>
AdversarialPair<Scalar> run_attack(const Objective<Scalar>& objective,
                                   const ad::Matrix<Scalar>& x_a, const ad::Matrix<Scalar>& x_v,
                                   const AttackConfig& cfg) {
  switch (cfg.method) {
    case AttackMethod::kBim: return bim(objective, x_a, x_v, cfg);
    case AttackMethod::kMim: return mim(objective, x_a, x_v, cfg);
    case AttackMethod::kPgd: return pgd(objective, x_a, x_v, cfg);
  }
  throw AttackError("unknown attack method");
}

// Attacks one labelled sequence against the model under cfg.scenario.
template <typename Scalar>
AdversarialPair<Scalar> run_attack(const ModelParams<Scalar>& params,
                                   const ad::Matrix<Scalar>& x_a, const ad::Matrix<Scalar>& x_v,
                                   std::span<const int> labels, const AttackConfig& cfg) {
  return run_attack(model_objective(params, labels, cfg.scenario), x_a, x_v, cfg);
}

}  // namespace avasd
