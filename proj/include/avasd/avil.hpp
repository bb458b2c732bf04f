// Audio-visual interaction losses.
//
// Per batch, the four class/modality centroids are the means of the front-end
// (or cross-attended) embeddings of speech and non-speech frames:
//
//   L1 =   cos(c_as, c_ans) + cos(c_vs, c_vns)                 inter-class dispersion
//   L2 = -(mean_S [cos(c_as, e_a) + cos(c_vs, e_v)]
//          + mean_N [cos(c_ans, e_a) + cos(c_vns, e_v)])       intra-class compactness
//   L3 = -(cos(c_as, c_vs) + cos(c_ans, c_vns))                audio/visual center agreement
//   L4 =   mean_S |e_v - e_a| + mean_N |e_v - e_a|             audio/visual sample distance
//
// A batch with no speech (or no non-speech) frames has no centroid for that
// class. Terms that need the missing centroid are dropped and counted in
// `skipped` instead of producing NaN.

#pragma once

#include "avasd/model.hpp"
#include "avasd/tensor.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace avasd {

struct AvilWeights {
  std::array<double, 4> lambda{0.0, 0.0, 0.0, 0.0};

  static AvilWeights uniform(double v) { return AvilWeights{{v, v, v, v}}; }

  bool all_zero() const {
    for (double l : lambda) {
      if (l != 0.0) return false;
    }
    return true;
  }

  void validate() const {
    for (double l : lambda) {
      if (!std::isfinite(l) || l < 0.0) {
        throw std::invalid_argument("AVIL weights must be finite and non-negative");
      }
    }
  }
};

// Which embeddings the interaction losses are computed on.
enum class AvilSource { kFrontEnd, kCrossAttended };

inline std::string_view to_string(AvilSource s) {
  return s == AvilSource::kFrontEnd ? "frontend" : "cross-attended";
}

inline AvilSource avil_source_from_string(std::string_view s) {
  if (s == "frontend") return AvilSource::kFrontEnd;
  if (s == "cross-attended") return AvilSource::kCrossAttended;
  throw std::invalid_argument("unknown AVIL source '" + std::string(s) + "'");
}

template <typename Scalar>
struct Centers {
  std::optional<ad::Var<Scalar>> audio_speech, audio_nonspeech;
  std::optional<ad::Var<Scalar>> video_speech, video_nonspeech;
  std::vector<ad::Index> speech_rows, nonspeech_rows;

  bool has_speech() const { return !speech_rows.empty(); }
  bool has_nonspeech() const { return !nonspeech_rows.empty(); }
  bool complete() const { return has_speech() && has_nonspeech(); }
};

template <typename Scalar>
struct AvilLoss {
  std::optional<ad::Var<Scalar>> value;
  int skipped = 0;
};

namespace detail {

template <typename Scalar>
void check_batch(const ad::Var<Scalar>& e_a, const ad::Var<Scalar>& e_v,
                 std::span<const int> labels) {
  if (e_a.rows() != e_v.rows() || e_a.cols() != e_v.cols()) {
    throw ad::ShapeError("AVIL: audio embeddings " + e_a.shape_string() +
                         " vs visual embeddings " + e_v.shape_string());
  }
  if (e_a.rows() != static_cast<ad::Index>(labels.size())) {
    throw ad::ShapeError("AVIL: " + std::to_string(e_a.rows()) + " embeddings vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ad::ShapeError("AVIL: empty batch");
}

template <typename Scalar>
ad::Var<Scalar> scalar_constant(ad::Tape<Scalar>& tape, double v) {
  return tape.constant(ad::Matrix<Scalar>::Constant(1, 1, static_cast<Scalar>(v)));
}

}  // namespace detail

template <typename Scalar>
Centers<Scalar> compute_centers(const ad::Var<Scalar>& e_a, const ad::Var<Scalar>& e_v,
                                std::span<const int> labels) {
  detail::check_batch(e_a, e_v, labels);
  Centers<Scalar> c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("labels must be binary");
    (labels[i] ? c.speech_rows : c.nonspeech_rows).push_back(static_cast<ad::Index>(i));
  }
  if (c.has_speech()) {
    c.audio_speech = ad::mean_rows(ad::take_rows(e_a, c.speech_rows));
    c.video_speech = ad::mean_rows(ad::take_rows(e_v, c.speech_rows));
  }
  if (c.has_nonspeech()) {
    c.audio_nonspeech = ad::mean_rows(ad::take_rows(e_a, c.nonspeech_rows));
    c.video_nonspeech = ad::mean_rows(ad::take_rows(e_v, c.nonspeech_rows));
  }
  return c;
}

// Intra-modality inter-class dispersion, in [-2, 2].
template <typename Scalar>
AvilLoss<Scalar> loss_l1(const Centers<Scalar>& c) {
  if (!c.complete()) return {std::nullopt, 1};
  return {ad::cosine(*c.audio_speech, *c.audio_nonspeech) +
              ad::cosine(*c.video_speech, *c.video_nonspeech),
          0};
}

// Intra-modality intra-class compactness (negated similarity), in [-4, 4].
template <typename Scalar>
AvilLoss<Scalar> loss_l2(const ad::Var<Scalar>& e_a, const ad::Var<Scalar>& e_v,
                         std::span<const int> labels, const Centers<Scalar>& c) {
  detail::check_batch(e_a, e_v, labels);
  AvilLoss<Scalar> out;
  auto class_term = [&](const std::vector<ad::Index>& rows, const ad::Var<Scalar>& ca,
                        const ad::Var<Scalar>& cv) {
    return ad::mean(ad::cosine_rows(ad::take_rows(e_a, rows), ca) +
                    ad::cosine_rows(ad::take_rows(e_v, rows), cv));
  };
  std::optional<ad::Var<Scalar>> similarity;
  if (c.has_speech()) {
    similarity = class_term(c.speech_rows, *c.audio_speech, *c.video_speech);
  } else {
    ++out.skipped;
  }
  if (c.has_nonspeech()) {
    auto t = class_term(c.nonspeech_rows, *c.audio_nonspeech, *c.video_nonspeech);
    similarity = similarity ? *similarity + t : t;
  } else {
    ++out.skipped;
  }
  if (similarity) out.value = ad::scale(*similarity, Scalar(-1));
  return out;
}

// Inter-modality intra-class center agreement (negated), in [-2, 2].
template <typename Scalar>
AvilLoss<Scalar> loss_l3(const Centers<Scalar>& c) {
  if (!c.complete()) return {std::nullopt, 1};
  return {ad::scale(ad::cosine(*c.audio_speech, *c.video_speech) +
                        ad::cosine(*c.audio_nonspeech, *c.video_nonspeech),
                    Scalar(-1)),
          0};
}

// Inter-modality intra-class sample distance, >= 0.
template <typename Scalar>
AvilLoss<Scalar> loss_l4(const ad::Var<Scalar>& e_a, const ad::Var<Scalar>& e_v,
                         std::span<const int> labels) {
  detail::check_batch(e_a, e_v, labels);
  std::vector<ad::Index> speech, nonspeech;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    (labels[i] ? speech : nonspeech).push_back(static_cast<ad::Index>(i));
  }
  const auto diff = e_v - e_a;
  AvilLoss<Scalar> out;
  for (const auto* rows : {&speech, &nonspeech}) {
    if (rows->empty()) {
      ++out.skipped;
      continue;
    }
    auto t = ad::mean(ad::row_norms(ad::take_rows(diff, *rows)));
    out.value = out.value ? *out.value + t : t;
  }
  return out;
}

template <typename Scalar>
struct AvilTerms {
  std::array<AvilLoss<Scalar>, 4> terms;

  int skipped() const {
    int n = 0;
    for (const auto& t : terms) n += t.skipped;
    return n;
  }
};

template <typename Scalar>
AvilTerms<Scalar> avil_terms(const ad::Var<Scalar>& e_a, const ad::Var<Scalar>& e_v,
                             std::span<const int> labels) {
  const auto c = compute_centers(e_a, e_v, labels);
  return {{loss_l1(c), loss_l2(e_a, e_v, labels, c), loss_l3(c), loss_l4(e_a, e_v, labels)}};
}

// sum_j lambda_j L_j over the terms that are present (a 0 constant when none are).
template <typename Scalar>
ad::Var<Scalar> avil_penalty(ad::Tape<Scalar>& tape, const AvilTerms<Scalar>& t,
                             const AvilWeights& w) {
  std::optional<ad::Var<Scalar>> total;
  for (std::size_t j = 0; j < 4; ++j) {
    if (!t.terms[j].value) continue;
    auto term = ad::scale(*t.terms[j].value, static_cast<Scalar>(w.lambda[j]));
    total = total ? *total + term : term;
  }
  return total ? *total : detail::scalar_constant(tape, 0.0);
}

template <typename Scalar>
struct ObjectiveParts {
  ad::Var<Scalar> total;
  ad::Var<Scalar> ce;
  AvilTerms<Scalar> avil;
};

// L_CE_all + sum_j lambda_j L_j for one sequence.
template <typename Scalar>
ObjectiveParts<Scalar> combined_objective(const ForwardTrace<Scalar>& tr,
                                          std::span<const int> labels, const AvilWeights& w,
                                          AvilSource source = AvilSource::kFrontEnd) {
  w.validate();
  const auto ce = combined_ce_loss(tr, labels);
  const bool front = source == AvilSource::kFrontEnd;
  auto terms = avil_terms(front ? tr.e_a : tr.z_a, front ? tr.e_v : tr.z_v, labels);
  auto total = ce + avil_penalty(*ce.tape(), terms, w);
  return {total, ce, std::move(terms)};
}

}  // namespace avasd
