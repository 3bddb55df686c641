// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration files (JSON, format tag "thermobnn-experiment").
//
//   {
//     "format": "thermobnn-experiment", "version": 1,
//     "seed": 1,
//     "network": {"preset": "toy11", "height": 32, "width": 32,
//                 "encoder": {"kind": "glt", "planes": 8, "adc_bits": 8}}
//              | {"file": "net.json"} | <inline thermobnn-net object>,
//     "data": {"synthetic": {"classes": 10, "train": 5000, "test": 1000, "height": 32,
//                            "width": 32, "channels": 3, "seed": 1, "noise": 0.06}}
//           | {"path": "dataset.tbds"},
//     "train": {"pretrain_epochs": 4, "binary_epochs": 8, "batch_size": 32,
//               "lr_init": 1e-3, "lr_final": 1e-8,
//               "optimizer": {"name": "radam" | "adam", "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
//               "augment": {"pad": 0, "crop_h": 0, "crop_w": 0, "flip": false, "cutout": 0},
//               "gamma": 2.2, "surrogate": {"p": 2, "m": 5, "beta": null},
//               "loss": {"temperature": 8, "lambda": 0.5}, "eval_each_epoch": false,
//               "recalibrate_norm": true},
//     "prune": {"first_block": 1, "stage_epochs": 12, "oneshot_epochs": 0,
//               "scratch_pretrain_epochs": 0, "scratch_binary_epochs": 0,
//               "lambda": 0.5, "groups": [1, 2, 8]}
//   }
//
// Every section except "network" is optional; missing keys keep defaults.
// Relative paths resolve against the config file's directory.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "thermobnn/dataio.hpp"
#include "thermobnn/pruning.hpp"
#include "thermobnn/train.hpp"

namespace thermobnn {

struct DataSource {
  std::optional<SyntheticSpec> synthetic;
  std::filesystem::path path;

  friend bool operator==(const DataSource&, const DataSource&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  NetConfig net;
  DataSource data;
  TrainConfig train;
  PruneConfig prune;

  /// Sets the experiment, training and initialization seed.
  void set_seed(std::uint64_t s);
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig experiment_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
std::string experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Synthetic data is generated; otherwise `override_path` or the configured path is loaded.
Dataset load_experiment_data(const ExperimentConfig& cfg, const std::filesystem::path& override_path = {});

}  // namespace thermobnn
