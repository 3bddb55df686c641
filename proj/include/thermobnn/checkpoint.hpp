// SPDX-License-Identifier: Apache-2.0
//
// Versioned model checkpoints.
//
// File layout (little-endian):
//   "TBCK"  u32 version
//   str     manifest (JSON: network, mode, seeds, provenance)
//   u32     parameter count, then per parameter:
//             str name, u8 kind, u64[] shape, f64[] values,
//             u8 packed flag, [u64 byte count, sign bits] for weights
//   u32     statistics count, then per entry: str name, f64[] mean, f64[] var
//   u8      optimizer state present, then the TrainState fields
//   u64     FNV-1a of every preceding byte
// Strings carry a u32 length prefix, arrays a u64 element count.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "thermobnn/train.hpp"

namespace thermobnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  NetConfig config;
  Mode mode = Mode::real;
  std::vector<Param> params;
  std::vector<NormStats> stats;
  std::optional<TrainState> state;
  std::uint64_t init_seed = 0;
  std::uint64_t train_seed = 0;
  /// "pretrain", "binarized", "prune-stage-b<k>", "oneshot", "scratch", ...
  std::string provenance;
  std::vector<std::string> history;
  /// Experiment config the run used, verbatim (may be empty).
  std::string experiment;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

Checkpoint capture(const Model& model, std::string provenance, std::uint64_t init_seed, std::uint64_t train_seed,
                   std::optional<TrainState> state = std::nullopt);
Model restore(const Checkpoint& ck);

std::vector<std::uint8_t> checkpoint_to_bytes(const Checkpoint& ck);
Checkpoint checkpoint_from_bytes(std::span<const std::uint8_t> bytes);

/// Writes the checkpoint and a "<path>.json" manifest sidecar, both atomically.
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Content hash stored in the file trailer.
std::uint64_t checkpoint_hash(const Checkpoint& ck);

std::string checkpoint_manifest(const Checkpoint& ck);

}  // namespace thermobnn
