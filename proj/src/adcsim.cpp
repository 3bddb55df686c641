// SPDX-License-Identifier: Apache-2.0
#include "thermobnn/adcsim.hpp"

#include <algorithm>
#include <cmath>

#include "thermobnn/errors.hpp"

namespace thermobnn {

RampADC::RampADC(int adc_bits, std::vector<std::uint32_t> codes, AdcNoise noise)
    : adc_bits_(adc_bits), codes_(std::move(codes)), noise_(noise) {
  if (adc_bits < 1 || adc_bits > 16) throw ConfigError("RampADC: bit depth must lie in [1, 16]");
  const std::uint32_t max_code = (1U << adc_bits) - 1U;
  for (std::size_t i = 0; i < codes_.size(); ++i) {
    if (codes_[i] > max_code) throw ConfigError("RampADC: code " + std::to_string(codes_[i]) + " out of range");
    if (i > 0 && codes_[i] < codes_[i - 1]) throw ConfigError("RampADC: codes must be non-decreasing");
  }
  if (noise_.sigma < 0.0 || noise_.flip_prob < 0.0 || noise_.flip_prob > 1.0) {
    throw ConfigError("RampADC: invalid noise model");
  }
  // Vmin = 0, Vmax = 1: the DAC level of code c is c / (2^Nb - 1).
  const double fs = static_cast<double>(max_code);
  for (auto c : codes_) levels_.push_back(static_cast<double>(c) / fs);
}

double RampADC::level(std::size_t i) const noexcept { return levels_[i]; }

std::size_t RampADC::convert_pixel(double vpix, std::span<std::uint8_t> bits, std::uint64_t stream) const {
  if (bits.size() != codes_.size()) throw DimensionError("RampADC: output span must hold M bits");
  std::size_t comparisons = 0;
  for (std::size_t i = 0; i < codes_.size(); ++i) {
    double v = vpix;
    if (noise_.sigma > 0.0) v += noise_.sigma * counter_normal(noise_.seed, stream, 2 * i);
    bool out = v >= levels_[i];
    ++comparisons;
    if (noise_.flip_prob > 0.0 && counter_uniform(noise_.seed ^ 0x5bd1e995ULL, stream, i) < noise_.flip_prob) {
      out = !out;
    }
    bits[i] = out ? 1 : 0;
  }
  return comparisons;
}

std::vector<std::uint8_t> RampADC::convert_pixel(double vpix, std::uint64_t stream) const {
  std::vector<std::uint8_t> bits(codes_.size());
  convert_pixel(vpix, bits, stream);
  return bits;
}

std::vector<RampADC> adcs_from_table(const ThresholdTable& table, AdcNoise noise) {
  std::vector<RampADC> out;
  for (std::size_t c = 0; c < table.codes.size(); ++c) {
    AdcNoise n = noise;
    n.seed = noise.seed + c;
    out.emplace_back(table.adc_bits, table.codes[c], n);
  }
  return out;
}

FrameConversion convert_frame(const ImageF& image, std::span<const RampADC> adcs) {
  if (adcs.size() != image.channels) {
    throw DimensionError("convert_frame: " + std::to_string(adcs.size()) + " converters for " +
                         std::to_string(image.channels) + " channels");
  }
  const std::size_t m = adcs.empty() ? 0 : adcs.front().planes();
  for (const auto& a : adcs) {
    if (a.planes() != m) throw DimensionError("convert_frame: converters disagree on M");
  }
  FrameConversion fc;
  fc.planes.kind = EncodingKind::glt;
  fc.planes.planes_per_channel = m;
  fc.planes.planes = BitTensor(Shape{image.channels * m, image.height, image.width}, BitSemantics::plane01);
  const std::size_t hw = image.plane_size();
  std::vector<std::uint8_t> bits(m);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t p = 0; p < hw; ++p) {
      double v = image.data[c * hw + p];
      v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
      fc.comparisons += adcs[c].convert_pixel(v, bits, p);
      bool seen_zero = false, violation = false;
      for (std::size_t i = 0; i < m; ++i) {
        if (bits[i]) {
          fc.planes.planes.set_bit((c * m + i) * hw + p, true);
          violation = violation || seen_zero;
        } else {
          seen_zero = true;
        }
      }
      fc.monotonicity_violations += violation ? 1 : 0;
    }
  }
  return fc;
}

NoiseReport noise_report(const ImageF& image, std::span<const RampADC> noisy) {
  std::vector<RampADC> clean;
  for (const auto& a : noisy) clean.emplace_back(a.adc_bits(), a.codes());
  const auto ref = convert_frame(image, clean);
  const auto got = convert_frame(image, noisy);
  NoiseReport r;
  r.pixels = image.channels * image.plane_size();
  r.bits = ref.planes.planes.numel();
  r.monotonicity_violations = got.monotonicity_violations;
  for (std::size_t i = 0; i < r.bits; ++i) {
    r.bit_errors += ref.planes.planes.bit(i) != got.planes.planes.bit(i) ? 1 : 0;
  }
  return r;
}

}  // namespace thermobnn
