// SPDX-License-Identifier: Apache-2.0
//
// Datasets, the binary dataset format, folder ingestion, augmentation and
// the synthetic desk-scale generator.
//
// Binary dataset layout (little-endian):
//   0  "TBDS"            magic
//   4  u32 version       (1)
//   8  u32 dtype         (1 = u8 pixels, 2 = u16 pixels)
//  12  u32 adc_bits
//  16  u32 count, u32 channels, u32 height, u32 width, u32 num_classes
//  36  u32 label[count]
//      u8  split[count]  (0 = train, 1 = test)
//      pixels, image-major, planar (channel, row, column)
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "thermobnn/image.hpp"
#include "thermobnn/rng.hpp"

namespace thermobnn {

enum class Split : std::uint8_t { train = 0, test = 1 };

struct Dataset {
  int adc_bits = 8;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<ImageU16> images;
  std::vector<std::uint32_t> labels;
  std::vector<Split> splits;

  std::size_t size() const noexcept { return images.size(); }
  std::vector<std::size_t> indices(Split s) const;
  /// Throws LoadError naming the first offending record.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

std::vector<std::uint8_t> dataset_to_bytes(const Dataset& ds);
Dataset dataset_from_bytes(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

/// Loads a binary dataset file, or a directory with one sub-folder per class
/// holding binary PGM (P5) / PPM (P6) images. Class indices follow the sorted
/// folder names. An optional `splits.txt` ("<relative path> train|test" per
/// line) assigns splits; unlisted images are train.
Dataset load_dataset(const std::filesystem::path& path);

/// Minimal netpbm reader: P5 and P6, maxval < 65536.
ImageU16 read_netpbm(const std::filesystem::path& path, int* adc_bits = nullptr);
void write_netpbm(const ImageU16& img, int adc_bits, const std::filesystem::path& path);

/// Integer pixels to [0, 1], then optional gamma inversion (gamma != 1).
ImageF normalize(const ImageU16& img, int adc_bits, double gamma = 1.0);

struct AugmentConfig {
  std::size_t pad = 0;      // zero padding on every side before the crop
  std::size_t crop_h = 0;   // 0 keeps the input height
  std::size_t crop_w = 0;
  bool flip = false;        // horizontal flip with probability 0.5
  std::size_t cutout = 0;   // side of a zeroed square, 0 disables

  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

ImageU16 pad_crop(const ImageU16& img, std::size_t pad, std::size_t top, std::size_t left,
                  std::size_t out_h, std::size_t out_w);
ImageU16 hflip(const ImageU16& img);
/// Zeroes a size x size square with top-left corner (top, left) in every channel.
void cutout(ImageU16& img, std::size_t top, std::size_t left, std::size_t size);

ImageU16 augment(const ImageU16& img, const AugmentConfig& cfg, Rng& rng);

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t train = 5000;
  std::size_t test = 1000;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::uint64_t seed = 1;
  /// Pixel noise std-dev in normalized units.
  double noise = 0.06;

  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

/// Oriented colour gratings: each class fixes an orientation, a spatial
/// frequency and a small mean-colour offset; phase, contrast, brightness,
/// jitter and noise are drawn per image. Labels cycle through the classes
/// within each split, so class counts differ by at most one.
Dataset make_synthetic(const SyntheticSpec& spec);

}  // namespace thermobnn
