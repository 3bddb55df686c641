// SPDX-License-Identifier: Apache-2.0
//
// Gradual block pruning with a distributional (KD) loss, and the two
// competitors used for comparison: one-shot depth pruning without KD and
// the pruned topology trained from scratch.
//
// Blocks are replaced from the last one towards `first_block`; each stage
// starts from the previous stage's parameters, with a freshly initialized
// LWC in the replaced slot, and is trained in binary mode against the
// original (unpruned) teacher.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "thermobnn/train.hpp"

namespace thermobnn {

struct PruneConfig {
  int first_block = 1;
  std::size_t stage_epochs = 12;
  /// 0 means one stage budget (stage_epochs).
  std::size_t oneshot_epochs = 0;
  /// 0 means the training config's budgets.
  std::size_t scratch_pretrain_epochs = 0;
  std::size_t scratch_binary_epochs = 0;
  double lambda = 0.5;
  /// Per block (index 0 = block 1); empty uses BlockSpec::lwc_groups.
  std::vector<std::size_t> groups;

  friend bool operator==(const PruneConfig&, const PruneConfig&) = default;
};

struct PruneStage {
  std::string name;    // "baseline", "prune-b3", "oneshot", "scratch"
  std::string method;  // "baseline", "gradual", "oneshot", "scratch"
  int block = 0;       // replaced block for gradual stages
  NetConfig config;
  std::uint64_t size_bits = 0;
  std::uint64_t bops = 0;
  double test_accuracy = 0.0;
};

struct PruneOptions {
  /// Stage checkpoints and per-epoch partial checkpoints go here; an
  /// existing directory is resumed from.
  std::optional<std::filesystem::path> dir;
  /// Stop after this many training epochs in this call.
  std::optional<std::size_t> stop_after;
  LogSink log;
  std::uint64_t init_seed = 1;
};

struct PruneRun {
  std::vector<PruneStage> stages;
  std::optional<Model> final_model;
  bool complete = false;
};

/// Replacement group count for block b (1-based).
std::size_t prune_groups(const NetConfig& cfg, const PruneConfig& pc, int block);

/// Topology with blocks first_block..N all replaced.
NetConfig pruned_config(const NetConfig& cfg, const PruneConfig& pc);

/// Number of gradual stages: N - first_block + 1. Throws ConfigError for an
/// out-of-range first block or a non-prunable block in range.
std::size_t stage_count(const NetConfig& cfg, const PruneConfig& pc);

/// Stage model for block b: previous stage parameters, new LWC in slot b.
Model make_stage_model(const Model& previous, int block, std::size_t groups, std::uint64_t init_seed);

PruneStage measure(const Model& model, const Dataset& data, const TrainConfig& cfg, std::string name,
                   std::string method, int block);

PruneRun prune_gradual(const Model& teacher, const Dataset& data, const TrainConfig& cfg, const PruneConfig& pc,
                       const PruneOptions& opt = {});

/// All targeted blocks replaced at once; trained with cross-entropy only.
PruneRun prune_oneshot_depth(const Model& teacher, const Dataset& data, const TrainConfig& cfg,
                             const PruneConfig& pc, const PruneOptions& opt = {});

/// Random initialization and the usual two-stage training, cross-entropy only.
PruneRun train_from_scratch(const NetConfig& pruned, const Dataset& data, const TrainConfig& cfg,
                            const PruneConfig& pc, const PruneOptions& opt = {});

/// CSV "stage,method,block,size_bits,bops,test_accuracy",
/// the baseline row first, then the stages in the order given.
std::string emit_tradeoff(const PruneStage& baseline, const std::vector<PruneStage>& stages);

}  // namespace thermobnn
