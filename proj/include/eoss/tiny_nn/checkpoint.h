#pragma once

// Binary parameter checkpoints, little-endian throughout:
//   bytes 0-7   "EOSSCKPT"
//   bytes 8-11  uint32 format version (1)
//   bytes 12-15 uint32 activation code (0 tanh, 1 relu, 2 identity)
//   uint64 layer count, uint64 width per layer, uint64 p, p float64 values.

#include <string>

#include "eoss/tiny_nn/mlp.h"

namespace eoss::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Format-level view; the quadratic back end stores theta with dims {d}.
struct RawCheckpoint {
  std::uint32_t activation_code = 0;
  std::vector<std::uint64_t> dims;
  VectorXd flat;
};

void write_raw_checkpoint(const std::string& path, const RawCheckpoint& ckpt);
RawCheckpoint read_raw_checkpoint(const std::string& path);

void write_checkpoint(const std::string& path, const MlpParams& params);
MlpParams read_checkpoint(const std::string& path);

}  // namespace eoss::nn
