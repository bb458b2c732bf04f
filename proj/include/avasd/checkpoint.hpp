// Model checkpoint file.
//
// A text header of "key value" lines terminated by "end", then the raw
// little-endian float32 contents of every parameter block, row-major, in the
// order the header's "block" lines list them (the Param enum order):
//
//   avasd-checkpoint 1
//   audio_dim 16
//   video_dim 64
//   embed_dim 16
//   cross_attention 1
//   seed 7
//   loss_mode avil
//   lambda 0.1 0.1 0.1 0.1
//   avil_source frontend
//   block audio_mean 1 16
//   ...
//   end

#pragma once

#include "avasd/avil.hpp"
#include "avasd/model.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace avasd {

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string loss_mode = "ce";
  AvilWeights lambda;
  AvilSource avil_source = AvilSource::kFrontEnd;
};

struct Checkpoint {
  ModelParams<float> params;
  CheckpointMeta meta;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace avasd
