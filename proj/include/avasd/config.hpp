// Experiment configuration: a sectioned INI file with typed keys.
//
// Every key has a default, so an empty file is a valid experiment. Seeds left
// unset inherit the run seed and are written back resolved. See docs/config.md
// for the grammar and the full key list.

#pragma once

#include "avasd/attack.hpp"
#include "avasd/avil.hpp"
#include "avasd/data.hpp"
#include "avasd/train.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace avasd {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataSection {
  std::optional<std::uint64_t> seed;
  int train_samples = 500;
  int test_samples = 200;
  GeneratorOptions generator;  // seed and n_samples are ignored here
};

struct ModelSection {
  std::string name = "model";
  std::optional<std::uint64_t> seed;
  int embed_dim = 16;
  bool cross_attention = true;
  TrainConfig train;  // train.seed mirrors `seed` after resolution
  // Checkpoint that crafts static adversarial copies (refresh = static).
  std::string adversarial_source;
};

struct SubstituteSection {
  bool enabled = false;
  std::optional<std::uint64_t> seed;
  bool cross_attention = false;
};

struct AttackGrid {
  std::vector<AttackMethod> methods{AttackMethod::kPgd};
  std::vector<double> eps_av{0, 1, 2, 3, 4, 5};
  std::vector<Modality> modalities{Modality::kAudio, Modality::kVisual, Modality::kBoth};
  std::vector<Scenario> scenarios{Scenario::kTrainingAware};
  AttackConfig base;  // steps, step sizes, momentum, restarts, init, clamp
  std::optional<std::uint64_t> seed;
  int seeds = 1;  // attack repetitions per cell, seeded seed, seed+1, ...
  bool transfer = false;  // also craft on the substitute and score on the model
  int archive_samples = 16;
};

struct EvalSection {
  bool correct_only = true;
  // Further checkpoints whose correct-prediction sets are intersected with
  // this model's before attacking.
  std::vector<std::string> filter_models;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int jobs = 1;
  std::string out;
  DataSection data;
  ModelSection model;
  SubstituteSection substitute;
  AttackGrid attack;
  EvalSection eval;

  // Fills unset seeds from `seed` and checks every value.
  void resolve();
  void validate() const;

  // All attack cells, in a fixed order (method, scenario, modality, eps).
  std::vector<AttackConfig> cells() const;

  GeneratorOptions train_generator() const;
  GeneratorOptions test_generator() const;
  ModelDims dims() const {
    return {data.generator.audio_dim, data.generator.video_dim, model.embed_dim};
  }
};

ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<string>");
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical text of a resolved config: every key, fixed order, shortest
// round-trip numbers. parse_config(dump_config(c)) reproduces c.
std::string dump_config(const ExperimentConfig& config);

// Short, filesystem-safe identity of one attack cell.
std::string cell_name(const AttackConfig& cell);

}  // namespace avasd
