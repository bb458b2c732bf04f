// Miniature audio-visual active speaker detector.
//
//   x_a -> standardize -> 2-layer per-frame MLP -> e_a --+-- cross-attention --> z_a --+
//   x_v -> standardize -> 2-layer per-frame MLP -> e_v --+                      z_v --+
//   [z_a | z_v] -> residual self-attention -> linear -> s_av
//   z_a -> linear -> s_a,  z_v -> linear -> s_v
//
// Cross-attention is single-head in both directions (audio queries video and
// video queries audio) with a residual connection. With cross_attention off
// the model is the no-cross-attention variant used as a transfer substitute.

#pragma once

#include "avasd/rng.hpp"
#include "avasd/tensor.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace avasd {

struct ModelDims {
  int audio_dim = 16;
  int video_dim = 64;
  int embed_dim = 16;

  bool operator==(const ModelDims&) const = default;
};

// Parameter blocks in checkpoint order.
enum class Param : int {
  kAudioMean,
  kAudioInvStd,
  kVideoMean,
  kVideoInvStd,
  kAudioW1,
  kAudioB1,
  kAudioW2,
  kAudioB2,
  kVideoW1,
  kVideoB1,
  kVideoW2,
  kVideoB2,
  kCrossAudioQuery,
  kCrossAudioKey,
  kCrossAudioValue,
  kCrossVideoQuery,
  kCrossVideoKey,
  kCrossVideoValue,
  kSelfQuery,
  kSelfKey,
  kSelfValue,
  kHeadAvW,
  kHeadAvB,
  kHeadAudioW,
  kHeadAudioB,
  kHeadVideoW,
  kHeadVideoB,
  kCount
};

inline constexpr int kParamCount = static_cast<int>(Param::kCount);

inline constexpr std::array<std::string_view, kParamCount> kParamNames = {
    "audio_mean",        "audio_inv_std",    "video_mean",       "video_inv_std",
    "audio_w1",          "audio_b1",         "audio_w2",         "audio_b2",
    "video_w1",          "video_b1",         "video_w2",         "video_b2",
    "cross_audio_query", "cross_audio_key",  "cross_audio_value", "cross_video_query",
    "cross_video_key",   "cross_video_value", "self_query",       "self_key",
    "self_value",        "head_av_w",        "head_av_b",        "head_audio_w",
    "head_audio_b",      "head_video_w",     "head_video_b"};

// Input standardization statistics are fixed after construction; everything
// else is trained.
inline constexpr bool is_trainable(Param p) { return static_cast<int>(p) >= 4; }

struct BlockShape {
  ad::Index rows;
  ad::Index cols;
};

inline BlockShape param_shape(Param p, const ModelDims& d) {
  const ad::Index a = d.audio_dim, v = d.video_dim, e = d.embed_dim, j = 2 * d.embed_dim;
  switch (p) {
    case Param::kAudioMean:
    case Param::kAudioInvStd: return {1, a};
    case Param::kVideoMean:
    case Param::kVideoInvStd: return {1, v};
    case Param::kAudioW1: return {a, e};
    case Param::kVideoW1: return {v, e};
    case Param::kAudioW2:
    case Param::kVideoW2:
    case Param::kCrossAudioQuery:
    case Param::kCrossAudioKey:
    case Param::kCrossAudioValue:
    case Param::kCrossVideoQuery:
    case Param::kCrossVideoKey:
    case Param::kCrossVideoValue: return {e, e};
    case Param::kAudioB1:
    case Param::kAudioB2:
    case Param::kVideoB1:
    case Param::kVideoB2: return {1, e};
    case Param::kSelfQuery:
    case Param::kSelfKey:
    case Param::kSelfValue: return {j, j};
    case Param::kHeadAvW: return {j, 1};
    case Param::kHeadAudioW:
    case Param::kHeadVideoW: return {e, 1};
    case Param::kHeadAvB:
    case Param::kHeadAudioB:
    case Param::kHeadVideoB: return {1, 1};
    case Param::kCount: break;
  }
  return {0, 0};
}

template <typename Scalar>
struct ModelParams {
  using Mat = ad::Matrix<Scalar>;

  ModelDims dims;
  bool cross_attention = true;
  std::array<Mat, kParamCount> blocks;

  Mat& operator[](Param p) { return blocks[static_cast<int>(p)]; }
  const Mat& operator[](Param p) const { return blocks[static_cast<int>(p)]; }

  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out;
    out.dims = dims;
    out.cross_attention = cross_attention;
    for (int i = 0; i < kParamCount; ++i) out.blocks[i] = blocks[i].template cast<Other>();
    return out;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (int i = 0; i < kParamCount; ++i) {
      if (is_trainable(static_cast<Param>(i))) n += static_cast<std::size_t>(blocks[i].size());
    }
    return n;
  }
};

// Identity standardization, Glorot-uniform weights, zero biases.
template <typename Scalar>
ModelParams<Scalar> init_params(const ModelDims& dims, std::uint64_t seed,
                                bool cross_attention = true) {
  ModelParams<Scalar> p;
  p.dims = dims;
  p.cross_attention = cross_attention;
  Rng rng(seed);
  for (int i = 0; i < kParamCount; ++i) {
    const auto param = static_cast<Param>(i);
    const auto [r, c] = param_shape(param, dims);
    auto& m = p.blocks[i];
    switch (param) {
      case Param::kAudioInvStd:
      case Param::kVideoInvStd: m = ad::Matrix<Scalar>::Ones(r, c); break;
      case Param::kAudioMean:
      case Param::kVideoMean:
      case Param::kAudioB1:
      case Param::kAudioB2:
      case Param::kVideoB1:
      case Param::kVideoB2:
      case Param::kHeadAvB:
      case Param::kHeadAudioB:
      case Param::kHeadVideoB: m = ad::Matrix<Scalar>::Zero(r, c); break;
      default: {
        const double limit = std::sqrt(6.0 / static_cast<double>(r + c));
        m.resize(r, c);
        for (ad::Index k = 0; k < m.size(); ++k) {
          m.data()[k] = static_cast<Scalar>(rng.uniform(-limit, limit));
        }
      }
    }
  }
  return p;
}

// Sets the input standardization from per-feature statistics.
template <typename Scalar>
void set_standardization(ModelParams<Scalar>& p, const ad::Matrix<double>& audio_frames,
                         const ad::Matrix<double>& video_frames) {
  auto fill = [](const ad::Matrix<double>& x, ad::Matrix<Scalar>& mean, ad::Matrix<Scalar>& inv) {
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Eigen::RowVectorXd var =
        (x.rowwise() - mu).array().square().colwise().sum() / std::max<double>(1, x.rows() - 1);
    mean = mu.template cast<Scalar>();
    inv = (1.0 / (var.array().sqrt() + 1e-12)).matrix().template cast<Scalar>();
  };
  fill(audio_frames, p[Param::kAudioMean], p[Param::kAudioInvStd]);
  fill(video_frames, p[Param::kVideoMean], p[Param::kVideoInvStd]);
}

// Parameters placed on a tape, either as gradient-requiring variables
// (training) or constants (attacks, evaluation).
template <typename Scalar>
struct BoundParams {
  bool cross_attention = true;
  std::array<ad::Var<Scalar>, kParamCount> vars;

  const ad::Var<Scalar>& operator[](Param p) const { return vars[static_cast<int>(p)]; }
};

template <typename Scalar>
BoundParams<Scalar> bind(ad::Tape<Scalar>& tape, const ModelParams<Scalar>& p, bool trainable) {
  BoundParams<Scalar> b;
  b.cross_attention = p.cross_attention;
  for (int i = 0; i < kParamCount; ++i) {
    b.vars[i] = trainable && is_trainable(static_cast<Param>(i)) ? tape.variable(p.blocks[i])
                                                                 : tape.constant(p.blocks[i]);
  }
  return b;
}

template <typename Scalar>
struct ForwardTrace {
  ad::Var<Scalar> e_a, e_v;  // front-end embeddings, K x E
  ad::Var<Scalar> z_a, z_v;  // post cross-attention embeddings, K x E
  ad::Var<Scalar> logit_av, logit_a, logit_v;  // K x 1
  ad::Var<Scalar> s_av, s_a, s_v;              // K x 1, in [0, 1]

  ad::Index frames() const { return e_a.rows(); }
};

template <typename Scalar>
ForwardTrace<Scalar> forward(const BoundParams<Scalar>& p, const ad::Var<Scalar>& x_a,
                             const ad::Var<Scalar>& x_v) {
  using ad::add_row;
  using ad::matmul;
  using ad::mul_row;
  using ad::relu;
  using ad::scaled_dot_product_attention;
  if (x_a.rows() != x_v.rows()) {
    throw ad::ShapeError("forward: audio has " + std::to_string(x_a.rows()) +
                         " frames, video has " + std::to_string(x_v.rows()));
  }
  if (x_a.rows() == 0) throw ad::ShapeError("forward: empty sequence");
  if (x_a.cols() != p[Param::kAudioMean].cols() || x_v.cols() != p[Param::kVideoMean].cols()) {
    throw ad::ShapeError("forward: feature dims " + x_a.shape_string() + ", " +
                         x_v.shape_string() + " do not match the model");
  }

  auto standardize = [](const ad::Var<Scalar>& x, const ad::Var<Scalar>& mean,
                        const ad::Var<Scalar>& inv_std) {
    return mul_row(add_row(x, ad::scale(mean, Scalar(-1))), inv_std);
  };
  auto encode = [](const ad::Var<Scalar>& x, const ad::Var<Scalar>& w1, const ad::Var<Scalar>& b1,
                   const ad::Var<Scalar>& w2, const ad::Var<Scalar>& b2) {
    return add_row(matmul(relu(add_row(matmul(x, w1), b1)), w2), b2);
  };

  ForwardTrace<Scalar> tr;
  const auto xa = standardize(x_a, p[Param::kAudioMean], p[Param::kAudioInvStd]);
  const auto xv = standardize(x_v, p[Param::kVideoMean], p[Param::kVideoInvStd]);
  tr.e_a = encode(xa, p[Param::kAudioW1], p[Param::kAudioB1], p[Param::kAudioW2],
                  p[Param::kAudioB2]);
  tr.e_v = encode(xv, p[Param::kVideoW1], p[Param::kVideoB1], p[Param::kVideoW2],
                  p[Param::kVideoB2]);

  if (p.cross_attention) {
    tr.z_a = tr.e_a + scaled_dot_product_attention(matmul(tr.e_a, p[Param::kCrossAudioQuery]),
                                                   matmul(tr.e_v, p[Param::kCrossAudioKey]),
                                                   matmul(tr.e_v, p[Param::kCrossAudioValue]));
    tr.z_v = tr.e_v + scaled_dot_product_attention(matmul(tr.e_v, p[Param::kCrossVideoQuery]),
                                                   matmul(tr.e_a, p[Param::kCrossVideoKey]),
                                                   matmul(tr.e_a, p[Param::kCrossVideoValue]));
  } else {
    tr.z_a = tr.e_a;
    tr.z_v = tr.e_v;
  }
  tr.z_a = ad::layer_norm_rows(tr.z_a);
  tr.z_v = ad::layer_norm_rows(tr.z_v);

  const auto joint = ad::concat_cols(tr.z_a, tr.z_v);
  const auto temporal =
      joint + scaled_dot_product_attention(matmul(joint, p[Param::kSelfQuery]),
                                           matmul(joint, p[Param::kSelfKey]),
                                           matmul(joint, p[Param::kSelfValue]));

  tr.logit_av = add_row(matmul(temporal, p[Param::kHeadAvW]), p[Param::kHeadAvB]);
  tr.logit_a = add_row(matmul(tr.z_a, p[Param::kHeadAudioW]), p[Param::kHeadAudioB]);
  tr.logit_v = add_row(matmul(tr.z_v, p[Param::kHeadVideoW]), p[Param::kHeadVideoB]);
  tr.s_av = ad::sigmoid(tr.logit_av);
  tr.s_a = ad::sigmoid(tr.logit_a);
  tr.s_v = ad::sigmoid(tr.logit_v);
  return tr;
}

// Weight of each auxiliary (audio-only, visual-only) head in the training loss.
inline constexpr double kAuxHeadWeight = 0.4;

// Per-sample cross-entropy of one head, -(1/T) sum[y log s + (1-y) log(1-s)],
// evaluated from logits.
template <typename Scalar>
ad::Var<Scalar> head_loss(const ad::Var<Scalar>& logits, std::span<const int> labels) {
  return ad::bce_with_logits(logits, labels);
}

// L_CE_av + 0.4 L_CE_a + 0.4 L_CE_v.
template <typename Scalar>
ad::Var<Scalar> combined_ce_loss(const ForwardTrace<Scalar>& tr, std::span<const int> labels) {
  const auto w = static_cast<Scalar>(kAuxHeadWeight);
  return head_loss(tr.logit_av, labels) +
         (w * head_loss(tr.logit_a, labels) + w * head_loss(tr.logit_v, labels));
}

// Clamped cross-entropy of a plain score sequence.
inline double ce_loss(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ad::ShapeError("ce_loss: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  ad::Tape<double> tape;
  ad::Matrix<double> s(static_cast<ad::Index>(scores.size()), 1);
  for (std::size_t i = 0; i < scores.size(); ++i) s(static_cast<ad::Index>(i), 0) = scores[i];
  return ad::bce(tape.constant(std::move(s)), labels).item();
}

}  // namespace avasd
