// SPDX-License-Identifier: Apache-2.0
//
// Functional model of a programmable-slope ramp ADC. A DAC steps through M
// threshold codes and a single comparator emits one bit per step, so each
// pixel costs exactly M comparisons. Voltages are normalized to [0, 1].
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "thermobnn/encoders.hpp"
#include "thermobnn/image.hpp"
#include "thermobnn/rng.hpp"

namespace thermobnn {

struct AdcNoise {
  /// Std-dev of additive Gaussian noise on the pixel voltage, per comparison.
  double sigma = 0.0;
  /// Probability that a comparator output bit is inverted.
  double flip_prob = 0.0;
  std::uint64_t seed = 0;

  bool enabled() const noexcept { return sigma > 0.0 || flip_prob > 0.0; }
};

class RampADC {
 public:
  RampADC(int adc_bits, std::vector<std::uint32_t> codes, AdcNoise noise = {});

  int adc_bits() const noexcept { return adc_bits_; }
  std::size_t planes() const noexcept { return codes_.size(); }
  const std::vector<std::uint32_t>& codes() const noexcept { return codes_; }
  const AdcNoise& noise() const noexcept { return noise_; }

  /// DAC output voltage for step i.
  double level(std::size_t i) const noexcept;

  /// Converts one pixel; `stream` identifies the pixel for the noise RNG.
  /// Writes M bits into `bits` and returns the number of comparisons made.
  std::size_t convert_pixel(double vpix, std::span<std::uint8_t> bits, std::uint64_t stream = 0) const;
  std::vector<std::uint8_t> convert_pixel(double vpix, std::uint64_t stream = 0) const;

 private:
  int adc_bits_;
  std::vector<std::uint32_t> codes_;
  std::vector<double> levels_;
  AdcNoise noise_;
};

/// One converter per channel, built from an exported code table.
std::vector<RampADC> adcs_from_table(const ThresholdTable& table, AdcNoise noise = {});

struct FrameConversion {
  EncodedPlanes planes;
  std::size_t comparisons = 0;
  /// Pixels whose M-bit column is not thermometric.
  std::size_t monotonicity_violations = 0;
};

FrameConversion convert_frame(const ImageF& image, std::span<const RampADC> adcs);

struct NoiseReport {
  std::size_t bits = 0;
  std::size_t bit_errors = 0;
  std::size_t pixels = 0;
  std::size_t monotonicity_violations = 0;
  double ber() const noexcept { return bits ? static_cast<double>(bit_errors) / static_cast<double>(bits) : 0.0; }
};

/// Converts with and without noise and compares bit by bit.
NoiseReport noise_report(const ImageF& image, std::span<const RampADC> noisy);

}  // namespace thermobnn
