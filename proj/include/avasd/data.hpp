// Synthetic frame-labelled audio-visual clips.
//
// Each clip follows one of four cases. A 2-state Markov chain decides, per
// frame, whether the latent speaking pattern is active. Where it is active the
// pattern (a fixed random direction per dataset seed, scaled by a per-frame
// amplitude shared by both modalities) is added to unit Gaussian noise:
//
//   case                     audio pattern   visual pattern   label
//   speech-with-speaker      yes             yes              active
//   speech-without-speaker   yes             no               0
//   no-audible-speaker       no              no               0
//   speaker-without-speech   no              yes              0
//
// Audio features are emitted at raw scale `audio_scale` (the model
// standardizes its inputs); visual features are unit scale.

#pragma once

#include "avasd/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace avasd {

inline constexpr int kGeneratorVersion = 1;

enum class CaseTag {
  kSpeechWithSpeaker,
  kSpeechWithoutSpeaker,
  kNoAudibleSpeaker,
  kSpeakerWithoutSpeech
};

std::string_view to_string(CaseTag tag);
CaseTag case_from_string(std::string_view s);

struct AVSample {
  ad::Matrix<float> audio;  // T x D_a
  ad::Matrix<float> video;  // T x D_v
  std::vector<int> labels;  // T, binary
  std::vector<int> active;  // T, Markov chain state (pattern present where the case allows)
  CaseTag tag = CaseTag::kNoAudibleSpeaker;
  std::uint64_t seed = 0;

  int frames() const { return static_cast<int>(labels.size()); }
};

struct GeneratorOptions {
  std::uint64_t seed = 1;
  int n_samples = 500;
  // Index of the first generated sample. Held-out splits reuse the seed (and
  // so the latent pattern) with a later first_index.
  std::uint64_t first_index = 0;
  // speech-with-speaker, speech-without-speaker, no-audible-speaker,
  // speaker-without-speech
  std::array<double, 4> case_mix{0.4, 0.2, 0.2, 0.2};
  int audio_dim = 16;
  int video_dim = 64;
  int min_frames = 5;
  int max_frames = 20;
  double stay_probability = 0.85;
  double start_active_probability = 0.5;
  double signal_amplitude = 6.0;
  double amplitude_jitter = 0.25;
  double audio_scale = 1e-3;

  void validate() const;
};

struct Dataset {
  GeneratorOptions options;
  std::vector<AVSample> samples;
};

class DataFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Dataset generate_dataset(const GeneratorOptions& options);

// JSON Lines: a header object on line 1, one sample object per following line.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// FNV-1a over every float bit pattern, label, case tag and frame count.
std::uint64_t dataset_hash(const Dataset& ds);

// All frames of all samples stacked, for input standardization.
ad::Matrix<double> stack_audio(std::span<const AVSample> samples);
ad::Matrix<double> stack_video(std::span<const AVSample> samples);

// Fraction of frames carrying audible speech (pattern present in the audio).
double speech_frame_fraction(const Dataset& ds);

}  // namespace avasd
