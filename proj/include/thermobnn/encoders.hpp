// SPDX-License-Identifier: Apache-2.0
//
// Input binarization: learned thermometer (GLT), fixed linear thermometer,
// base-2 bit planes and gamma preprocessing.
//
// GLT keeps M+1 positive latent values per channel. Thresholds are the
// cumulative sums of the normalized latents, so they are strictly
// increasing inside (0, 1) whatever the latents are.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "thermobnn/bitcore.hpp"
#include "thermobnn/image.hpp"

namespace thermobnn {

inline constexpr double kLatentFloor = 0.05;

struct ThermoParams {
  std::size_t channels = 0;
  std::size_t planes = 0;  // M
  int adc_bits = 8;        // Nb
  double latent_floor = kLatentFloor;
  /// channels x (planes + 1), row-major.
  std::vector<double> latent;

  /// Linear-ramp initialization for every channel.
  static ThermoParams init(std::size_t channels, std::size_t planes, int adc_bits = 8,
                           std::optional<double> scale = std::nullopt);

  std::span<double> channel_latent(std::size_t c) {
    return {latent.data() + c * (planes + 1), planes + 1};
  }
  std::span<const double> channel_latent(std::size_t c) const {
    return {latent.data() + c * (planes + 1), planes + 1};
  }
  std::vector<double> thresholds(std::size_t c) const;
  std::vector<std::vector<double>> all_thresholds() const;

  /// Clamps every latent value to at least latent_floor.
  void project();

  friend bool operator==(const ThermoParams&, const ThermoParams&) = default;
};

struct SurrogateConfig {
  double p = 2.0;
  double m = 5.0;
  /// Gradient multiplier; nullopt selects 2 / sqrt(H * W * M).
  std::optional<double> beta;

  void validate() const;
  friend bool operator==(const SurrogateConfig&, const SurrogateConfig&) = default;
};

enum class EncodingKind : std::uint8_t { glt = 0, fixed_thermometer = 1, base2 = 2 };

const char* to_string(EncodingKind k);

struct EncodedPlanes {
  /// (channels * M) x H x W, plane01, channel-major: all planes of channel 0 first.
  BitTensor planes;
  EncodingKind kind = EncodingKind::glt;
  std::size_t planes_per_channel = 0;
  /// Pixels clamped into [0, 1] before encoding.
  std::size_t clamped = 0;
};

/// Packed plane file: "TBEP", then u32 version, kind (0 glt, 1 ft, 2 base2),
/// channels, planes per channel, height, width (28-byte header), followed by
/// ceil(C*M*H*W / 8) bytes of plane bits in BitTensor::to_bytes order.
inline constexpr std::size_t kPlaneFileHeader = 28;
std::vector<std::uint8_t> encoded_planes_to_bytes(const EncodedPlanes& e);
EncodedPlanes encoded_planes_from_bytes(std::span<const std::uint8_t> bytes);
/// One line per (channel, plane, row) of '0'/'1' characters.
std::string encoded_planes_dump(const EncodedPlanes& e);

/// t_i = sum_{j<=i} latent_j / sum(latent). Throws DomainError on non-positive input.
std::vector<double> thresholds_from_latent(std::span<const double> latent);

/// d t_i / d latent_j, row-major M x (M+1).
std::vector<double> threshold_jacobian(std::span<const double> latent);

/// Latent values whose thresholds form the linear ramp; k defaults to M / 1280.
std::vector<double> glt_init(std::size_t planes, int adc_bits, std::optional<double> scale = std::nullopt,
                             double latent_floor = kLatentFloor);

/// t_i = s (i - 0.5) / (2^Nb - 1) with s = 2^Nb / M.
std::vector<double> linear_ramp(std::size_t planes, int adc_bits);

EncodedPlanes encode_thermometer(const ImageF& image,
                                 std::span<const std::vector<double>> thresholds,
                                 EncodingKind kind = EncodingKind::glt);
EncodedPlanes encode_fixed_thermometer(const ImageF& image, std::size_t planes, int adc_bits);
EncodedPlanes encode_base2(const ImageU16& image, int adc_bits);

double gamma_inverse(double x, double gamma);
void gamma_inverse_inplace(ImageF& image, double gamma);

/// Clipped bell-shaped Heaviside derivative: min(|u|^((1-p)/p) / p, m) / m.
double surrogate_grad(double u, const SurrogateConfig& cfg);

/// Gradient of the loss with respect to the latent thresholds.
///
/// `upstream` holds dL/dI^b for one image, laid out like EncodedPlanes
/// ((channels * M) x H x W). Returns channels x (M + 1) values, already
/// multiplied by beta. Accumulates into `out` when it is non-empty.
void glt_backward(std::span<const float> upstream, const ImageF& image, const ThermoParams& params,
                  const SurrogateConfig& cfg, std::span<double> out);
std::vector<double> glt_backward(std::span<const float> upstream, const ImageF& image,
                                 const ThermoParams& params, const SurrogateConfig& cfg);

/// round(t * (2^Nb - 1)), ties to even.
std::vector<std::uint32_t> quantize_thresholds(std::span<const double> thresholds, int adc_bits);

/// Number of adjacent code pairs that collide.
std::size_t code_collisions(std::span<const std::uint32_t> codes);

struct ThresholdTable {
  int adc_bits = 8;
  std::size_t planes = 0;
  std::vector<std::vector<std::uint32_t>> codes;  // per channel

  static ThresholdTable from_params(const ThermoParams& params, int adc_bits);
  std::vector<std::vector<double>> dequantized() const;

  friend bool operator==(const ThresholdTable&, const ThresholdTable&) = default;
};

std::string threshold_table_to_text(const ThresholdTable& t);
ThresholdTable threshold_table_from_text(const std::string& text);
std::vector<std::uint8_t> threshold_table_to_binary(const ThresholdTable& t);
ThresholdTable threshold_table_from_binary(std::span<const std::uint8_t> bytes);
/// Reads either representation, detected by the binary magic.
ThresholdTable read_threshold_table(const std::filesystem::path& path);

}  // namespace thermobnn
