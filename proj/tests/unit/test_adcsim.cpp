// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <vector>

#include "thermobnn/adcsim.hpp"
#include "thermobnn/errors.hpp"

using namespace thermobnn;

namespace {

const std::vector<std::uint32_t> kRamp{16, 48, 80, 112, 144, 176, 208, 240};

}  // namespace

TEST_CASE("convert_pixel examples") {
  const RampADC adc(8, kRamp);
  CHECK(adc.convert_pixel(100.0 / 255.0) == std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0, 0, 0});
  CHECK(adc.convert_pixel(0.0) == std::vector<std::uint8_t>(8, 0));
  CHECK(adc.convert_pixel(1.0) == std::vector<std::uint8_t>(8, 1));
  // comparator fires at equality
  CHECK(adc.convert_pixel(80.0 / 255.0) == std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0, 0, 0});
  std::vector<std::uint8_t> bits(8);
  CHECK(adc.convert_pixel(0.5, bits) == 8);
  CHECK(adc.level(0) == 16.0 / 255.0);
}

TEST_CASE("RampADC validates its code table") {
  CHECK_THROWS_AS(RampADC(8, {10, 5}), ConfigError);
  CHECK_THROWS_AS(RampADC(8, {256}), ConfigError);
  CHECK_NOTHROW(RampADC(8, {7, 7, 9}));
}

TEST_CASE("noiseless conversion equals the software encoder") {
  Rng rng(12, 0);
  ThermoParams p = ThermoParams::init(3, 8, 8);
  for (auto& v : p.latent) v += rng.uniform();
  const ThresholdTable table = ThresholdTable::from_params(p, 8);
  const auto adcs = adcs_from_table(table);
  ImageF img(3, 40, 50);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  const FrameConversion f = convert_frame(img, adcs);
  const EncodedPlanes sw = encode_thermometer(img, table.dequantized());
  CHECK(f.planes.planes == sw.planes);
  CHECK(f.comparisons == 3 * 40 * 50 * 8);
  CHECK(f.monotonicity_violations == 0);
}

TEST_CASE("convert_frame composes per-pixel conversions") {
  const std::vector<RampADC> adcs{RampADC(8, kRamp)};
  ImageF img(1, 2, 2);
  img.data = {0.1F, 0.3F, 0.65F, 0.99F};
  const FrameConversion f = convert_frame(img, adcs);
  for (std::size_t p = 0; p < 4; ++p) {
    const auto bits = adcs[0].convert_pixel(img.data[p]);
    for (std::size_t i = 0; i < 8; ++i) CHECK(f.planes.planes.bit(i * 4 + p) == (bits[i] != 0));
  }
  const std::vector<RampADC> two{RampADC(8, kRamp), RampADC(8, kRamp)};
  CHECK_THROWS_AS(convert_frame(img, two), DimensionError);
}

TEST_CASE("bit flips with probability one complement the output") {
  AdcNoise flip;
  flip.flip_prob = 1.0;
  const std::vector<RampADC> clean{RampADC(8, kRamp)}, noisy{RampADC(8, kRamp, flip)};
  Rng rng(13, 1);
  ImageF img(1, 8, 8);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  const auto a = convert_frame(img, clean), b = convert_frame(img, noisy);
  CHECK(b.planes.planes == a.planes.planes.complement());
  const NoiseReport rep = noise_report(img, noisy);
  CHECK(rep.bits == 64 * 8);
  CHECK(rep.ber() == 1.0);
}

TEST_CASE("comparator noise is reproducible and reported") {
  AdcNoise n;
  n.sigma = 0.05;
  n.seed = 99;
  const std::vector<RampADC> noisy{RampADC(8, kRamp, n)};
  Rng rng(14, 2);
  ImageF img(1, 32, 32);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  const auto a = convert_frame(img, noisy), b = convert_frame(img, noisy);
  CHECK(a.planes.planes == b.planes.planes);
  CHECK(a.monotonicity_violations > 0);
  const NoiseReport rep = noise_report(img, noisy);
  CHECK(rep.pixels == 1024);
  CHECK(rep.bit_errors > 0);
  CHECK(rep.ber() < 0.5);
  CHECK(rep.monotonicity_violations == a.monotonicity_violations);
}
