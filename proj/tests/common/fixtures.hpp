// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "thermobnn/dataio.hpp"
#include "thermobnn/topology.hpp"

namespace fixture {

using namespace thermobnn;

// 3ch 8x8, M=4: stem 8, block 1 (16 s2, 16) prunable, block 2 (16 g2 shuffle)
inline NetConfig tiny_net(EncodingKind kind, std::size_t classes = 4) {
  NetConfig cfg;
  cfg.name = "tiny";
  cfg.in_channels = 3;
  cfg.height = cfg.width = 8;
  cfg.encoder = EncoderSpec{kind, 4, 8};
  cfg.stem = {ConvSpec{8}};
  cfg.blocks = {BlockSpec{"b1", BlockKind::plain, true, 2, {ConvSpec{16, 3, 2}, ConvSpec{16}}},
                BlockSpec{"b2", BlockKind::plain, false, 1, {ConvSpec{16, 3, 1, 2, true}}}};
  cfg.num_classes = classes;
  return cfg;
}

// two prunable blocks: stem 8 at 8x8, b1 16 at 4x4, b2 32 at 2x2
inline NetConfig tiny_prunable() {
  NetConfig cfg = tiny_net(EncodingKind::glt);
  cfg.name = "tiny-prunable";
  cfg.blocks = {BlockSpec{"b1", BlockKind::plain, true, 2, {ConvSpec{16, 3, 2}, ConvSpec{16}}},
                BlockSpec{"b2", BlockKind::plain, true, 4, {ConvSpec{32, 3, 2}, ConvSpec{32}}}};
  return cfg;
}

inline Dataset tiny_data(std::uint64_t seed, std::size_t train = 240, std::size_t test = 120) {
  SyntheticSpec s;
  s.classes = 4;
  s.train = train;
  s.test = test;
  s.height = s.width = 8;
  s.seed = seed;
  return make_synthetic(s);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / ("thermobnn_test_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace fixture
