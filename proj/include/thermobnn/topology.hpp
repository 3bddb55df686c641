// SPDX-License-Identifier: Apache-2.0
//
// Declarative network description, shape inference, lightweight-block
// replacement and size/BOPs accounting.
//
// A network is: input encoder -> stem convolutions -> blocks 1..N -> binary
// linear classifier. Every convolution is 3x3 (or k x k) with padding k/2
// and is followed by batch normalization and a binary activation. A
// lightweight block (LWC) is one g-group 3x3 stride-2 convolution that
// doubles the channel count, followed by a channel shuffle when g > 1.
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "thermobnn/encoders.hpp"

namespace thermobnn {

inline constexpr int kNetConfigVersion = 1;

struct ConvSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t groups = 1;
  bool shuffle = false;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

enum class BlockKind : std::uint8_t { plain = 0, lwc = 1 };

struct BlockSpec {
  std::string name;
  BlockKind kind = BlockKind::plain;
  bool prunable = false;
  /// Group count used when this block is replaced by an LWC.
  std::size_t lwc_groups = 1;
  std::vector<ConvSpec> layers;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct EncoderSpec {
  EncodingKind kind = EncodingKind::glt;
  std::size_t planes = 8;  // M; base2 uses adc_bits planes
  int adc_bits = 8;

  std::size_t planes_per_channel() const { return kind == EncodingKind::base2 ? static_cast<std::size_t>(adc_bits) : planes; }
  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

struct NetConfig {
  int version = kNetConfigVersion;
  std::string name;
  std::size_t in_channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  EncoderSpec encoder;
  std::vector<ConvSpec> stem;
  std::vector<BlockSpec> blocks;
  std::size_t num_classes = 10;

  std::size_t num_blocks() const noexcept { return blocks.size(); }
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

struct TensorDims {
  std::size_t c = 0, h = 0, w = 0;
  friend bool operator==(const TensorDims&, const TensorDims&) = default;
};

enum class LayerKind : std::uint8_t { conv = 0, linear = 1 };

/// One weight layer after shape inference.
struct LayerInfo {
  std::string name;  // stable parameter prefix, e.g. "b2.l1" or "b3.lwc"
  LayerKind kind = LayerKind::conv;
  int block = 0;     // 0 for stem and classifier, 1..N for blocks
  TensorDims in, out;
  ConvSpec conv;     // kernel/stride/groups/shuffle (linear: kernel 1)
  std::size_t weight_count = 0;
  std::size_t bn_channels = 0;  // 0 for the classifier
  std::uint64_t bops = 0;
};

/// Output size of a k x k convolution with padding k/2.
std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride);

/// Validates divisibility and infers every layer. Throws ConfigError.
std::vector<LayerInfo> infer_shapes(const NetConfig& cfg);
TensorDims block_input(const NetConfig& cfg, int block);
TensorDims block_output(const NetConfig& cfg, int block);

/// LWC block for an input of `in_channels` channels.
BlockSpec make_lwc(std::string name, std::size_t in_channels, std::size_t groups);

/// Swaps block `block` (1-based) for an LWC with `groups` groups.
NetConfig replace_block(const NetConfig& cfg, int block, std::size_t groups);

/// Source channel for every output channel of a shuffle with g groups:
/// out[j] = in[(j mod g) * (C / g) + j / g].
std::vector<std::size_t> shuffle_permutation(std::size_t channels, std::size_t groups);

template <typename T>
std::vector<T> channel_shuffle(std::span<const T> x, std::size_t channels, std::size_t groups) {
  const auto perm = shuffle_permutation(channels, groups);
  const std::size_t plane = channels == 0 ? 0 : x.size() / channels;
  std::vector<T> out(x.size());
  for (std::size_t j = 0; j < channels; ++j) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(perm[j] * plane), plane,
                out.begin() + static_cast<std::ptrdiff_t>(j * plane));
  }
  return out;
}

struct SizeReport {
  std::uint64_t binary_weight_bits = 0;
  std::uint64_t batchnorm_bits = 0;   // two 32-bit affine values per channel
  std::uint64_t encoder_bits = 0;     // 32-bit GLT latents
  std::uint64_t total_bits() const noexcept { return binary_weight_bits + batchnorm_bits + encoder_bits; }
};

SizeReport count_model_size(const NetConfig& cfg);

struct BopsReport {
  std::vector<std::pair<std::string, std::uint64_t>> per_layer;
  std::uint64_t total = 0;
};

/// One binary MAC counts as one BOP. `height`/`width` override the configured input.
BopsReport count_bops(const NetConfig& cfg, std::optional<std::pair<std::size_t, std::size_t>> input = std::nullopt);

/// CSV: layer,kind,in_c,in_h,in_w,out_c,out_h,out_w,groups,weight_bits,bops, one row per
/// layer and a final "total" row (total size bits, total BOPs).
std::string size_bops_csv(const NetConfig& cfg);

std::string net_config_to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const std::string& text);
NetConfig load_net_config(const std::string& path);

/// Built-in topologies: "toy11" (11 weight layers, 32x32 input) and
/// "vgg_small_like". Unknown names throw ConfigError.
NetConfig preset_config(const std::string& name, EncoderSpec encoder = {}, std::size_t height = 32, std::size_t width = 32);

}  // namespace thermobnn
