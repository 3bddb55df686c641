// SPDX-License-Identifier: Apache-2.0
#include "thermobnn/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "thermobnn/errors.hpp"
#include "thermobnn/io.hpp"

namespace thermobnn {

namespace {

constexpr std::string_view kTableMagic = "TBTC";
constexpr std::uint32_t kTableVersion = 1;

void check_adc_bits(int adc_bits) {
  if (adc_bits < 1 || adc_bits > 16) {
    throw ConfigError("ADC bit depth must lie in [1, 16], got " + std::to_string(adc_bits));
  }
}

double full_scale(int adc_bits) { return static_cast<double>((1U << adc_bits) - 1U); }

void check_increasing(std::span<const double> t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(t[i] > 0.0 && t[i] < 1.0) || (i > 0 && !(t[i] > t[i - 1]))) {
      throw DomainError("thermometer thresholds must be strictly increasing inside (0, 1)");
    }
  }
}

}  // namespace

const char* to_string(EncodingKind k) {
  switch (k) {
    case EncodingKind::glt: return "glt";
    case EncodingKind::fixed_thermometer: return "ft";
    case EncodingKind::base2: return "base2";
  }
  return "?";
}

std::vector<double> thresholds_from_latent(std::span<const double> latent) {
  if (latent.size() < 2) throw DomainError("latent thresholds need at least two entries");
  double total = 0.0;
  for (double v : latent) {
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("latent thresholds must be positive");
    total += v;
  }
  std::vector<double> t(latent.size() - 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    acc += latent[i];
    t[i] = acc / total;
  }
  return t;
}

std::vector<double> threshold_jacobian(std::span<const double> latent) {
  const auto t = thresholds_from_latent(latent);
  const double total = std::accumulate(latent.begin(), latent.end(), 0.0);
  const std::size_t m = t.size(), n = latent.size();
  std::vector<double> jac(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      jac[i * n + j] = ((j <= i ? 1.0 : 0.0) - t[i]) / total;
    }
  }
  return jac;
}

std::vector<double> linear_ramp(std::size_t planes, int adc_bits) {
  check_adc_bits(adc_bits);
  if (planes == 0) throw ConfigError("thermometer needs at least one plane");
  const double levels = std::ldexp(1.0, adc_bits);
  const double step = levels / static_cast<double>(planes);
  std::vector<double> t(planes);
  for (std::size_t i = 0; i < planes; ++i) {
    t[i] = step * (static_cast<double>(i + 1) - 0.5) / full_scale(adc_bits);
  }
  return t;
}

std::vector<double> glt_init(std::size_t planes, int adc_bits, std::optional<double> scale,
                             double latent_floor) {
  check_adc_bits(adc_bits);
  const std::size_t levels = std::size_t{1} << adc_bits;
  if (planes == 0 || levels % planes != 0) {
    throw ConfigError("GLT init: M=" + std::to_string(planes) + " must divide 2^Nb=" +
                      std::to_string(levels));
  }
  const double s = static_cast<double>(levels) / static_cast<double>(planes);
  const double k = scale.value_or(static_cast<double>(planes) / 1280.0);
  std::vector<double> latent(planes + 1, s * k);
  latent.front() = 0.5 * s * k;
  latent.back() = (0.5 * s - 1.0) * k;
  for (double v : latent) {
    if (!(v > latent_floor)) {
      throw ConfigError("GLT init: latent value " + std::to_string(v) + " not above floor " +
                        std::to_string(latent_floor) + " for M=" + std::to_string(planes) +
                        ", Nb=" + std::to_string(adc_bits));
    }
  }
  return latent;
}

ThermoParams ThermoParams::init(std::size_t channels, std::size_t planes, int adc_bits,
                                std::optional<double> scale) {
  ThermoParams p;
  p.channels = channels;
  p.planes = planes;
  p.adc_bits = adc_bits;
  const auto one = glt_init(planes, adc_bits, scale, p.latent_floor);
  for (std::size_t c = 0; c < channels; ++c) p.latent.insert(p.latent.end(), one.begin(), one.end());
  return p;
}

std::vector<double> ThermoParams::thresholds(std::size_t c) const {
  return thresholds_from_latent(channel_latent(c));
}

std::vector<std::vector<double>> ThermoParams::all_thresholds() const {
  std::vector<std::vector<double>> out;
  for (std::size_t c = 0; c < channels; ++c) out.push_back(thresholds(c));
  return out;
}

void ThermoParams::project() {
  for (double& v : latent) v = std::max(v, latent_floor);
}

void SurrogateConfig::validate() const {
  if (!(p > 1.0)) throw ConfigError("surrogate shape exponent p must exceed 1");
  if (!(m > 0.0)) throw ConfigError("surrogate clip m must be positive");
  if (beta && !(*beta > 0.0)) throw ConfigError("surrogate beta must be positive");
}

double surrogate_grad(double u, const SurrogateConfig& cfg) {
  const double a = std::abs(u);
  // |u|^((1-p)/p) is +inf at u = 0 and the clip takes over.
  const double raw = a == 0.0 ? cfg.m : std::pow(a, (1.0 - cfg.p) / cfg.p) / cfg.p;
  return std::min(raw, cfg.m) / cfg.m;
}

EncodedPlanes encode_thermometer(const ImageF& image, std::span<const std::vector<double>> thresholds,
                                 EncodingKind kind) {
  if (thresholds.size() != image.channels) {
    throw DimensionError("encode_thermometer: " + std::to_string(thresholds.size()) +
                         " threshold sets for " + std::to_string(image.channels) + " channels");
  }
  const std::size_t m = thresholds.empty() ? 0 : thresholds.front().size();
  for (const auto& t : thresholds) {
    if (t.size() != m) throw DimensionError("encode_thermometer: ragged threshold sets");
    check_increasing(t);
  }
  EncodedPlanes out;
  out.kind = kind;
  out.planes_per_channel = m;
  out.planes = BitTensor(Shape{image.channels * m, image.height, image.width}, BitSemantics::plane01);
  const std::size_t hw = image.plane_size();
  for (std::size_t c = 0; c < image.channels; ++c) {
    const auto& t = thresholds[c];
    for (std::size_t p = 0; p < hw; ++p) {
      double x = image.data[c * hw + p];
      if (!(x >= 0.0 && x <= 1.0)) {
        x = std::isnan(x) ? 0.0 : std::clamp(x, 0.0, 1.0);
        ++out.clamped;
      }
      for (std::size_t i = 0; i < m && x >= t[i]; ++i) out.planes.set_bit((c * m + i) * hw + p, true);
    }
  }
  return out;
}

EncodedPlanes encode_fixed_thermometer(const ImageF& image, std::size_t planes, int adc_bits) {
  const std::vector<std::vector<double>> t(image.channels, linear_ramp(planes, adc_bits));
  return encode_thermometer(image, t, EncodingKind::fixed_thermometer);
}

EncodedPlanes encode_base2(const ImageU16& image, int adc_bits) {
  check_adc_bits(adc_bits);
  const auto nb = static_cast<std::size_t>(adc_bits);
  const std::uint32_t max_v = (1U << adc_bits) - 1U;
  EncodedPlanes out;
  out.kind = EncodingKind::base2;
  out.planes_per_channel = nb;
  out.planes = BitTensor(Shape{image.channels * nb, image.height, image.width}, BitSemantics::plane01);
  const std::size_t hw = image.plane_size();
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t p = 0; p < hw; ++p) {
      const std::uint32_t v = image.data[c * hw + p];
      if (v > max_v) {
        throw DomainError("encode_base2: pixel value " + std::to_string(v) + " exceeds " +
                          std::to_string(max_v) + " at channel " + std::to_string(c) +
                          ", index " + std::to_string(p));
      }
      for (std::size_t i = 0; i < nb; ++i) {
        if ((v >> i) & 1U) out.planes.set_bit((c * nb + i) * hw + p, true);
      }
    }
  }
  return out;
}

double gamma_inverse(double x, double gamma) {
  if (!(gamma > 0.0)) throw DomainError("gamma must be positive");
  return std::pow(x, gamma);
}

void gamma_inverse_inplace(ImageF& image, double gamma) {
  if (!(gamma > 0.0)) throw DomainError("gamma must be positive");
  if (gamma == 1.0) return;
  for (float& v : image.data) v = static_cast<float>(std::pow(static_cast<double>(v), gamma));
}

void glt_backward(std::span<const float> upstream, const ImageF& image, const ThermoParams& params,
                  const SurrogateConfig& cfg, std::span<double> out) {
  cfg.validate();
  const std::size_t m = params.planes, hw = image.plane_size();
  if (image.channels != params.channels) {
    throw DimensionError("glt_backward: image has " + std::to_string(image.channels) +
                         " channels, thresholds cover " + std::to_string(params.channels));
  }
  if (upstream.size() != params.channels * m * hw) {
    throw DimensionError("glt_backward: upstream gradient size mismatch");
  }
  if (out.size() != params.latent.size()) throw DimensionError("glt_backward: output size mismatch");
  const double beta = cfg.beta.value_or(
      2.0 / std::sqrt(static_cast<double>(image.height * image.width * m)));
  std::vector<double> dt(m);
  for (std::size_t c = 0; c < params.channels; ++c) {
    const auto lat = params.channel_latent(c);
    const auto t = thresholds_from_latent(lat);
    std::fill(dt.begin(), dt.end(), 0.0);
    bool any = false;
    for (std::size_t i = 0; i < m; ++i) {
      const float* g = upstream.data() + (c * m + i) * hw;
      const float* px = image.data.data() + c * hw;
      double acc = 0.0;
      for (std::size_t p = 0; p < hw; ++p) {
        if (g[p] == 0.0F) continue;
        // d Heaviside(x - t) / dt = -surrogate(x - t)
        acc -= static_cast<double>(g[p]) * surrogate_grad(static_cast<double>(px[p]) - t[i], cfg);
      }
      dt[i] = acc;
      any = any || acc != 0.0;
    }
    if (!any) continue;
    const double total = std::accumulate(lat.begin(), lat.end(), 0.0);
    // Closed form of d t_i / d latent_j = (1[j <= i] - t_i) / total.
    double suffix = 0.0, weighted = 0.0;
    for (std::size_t i = 0; i < m; ++i) weighted += dt[i] * t[i];
    std::vector<double> tail(m + 1, 0.0);
    for (std::size_t j = m; j-- > 0;) {
      suffix += dt[j];
      tail[j] = suffix;
    }
    for (std::size_t j = 0; j <= m; ++j) {
      out[c * (m + 1) + j] += beta * (tail[j] - weighted) / total;
    }
  }
}

std::vector<double> glt_backward(std::span<const float> upstream, const ImageF& image,
                                 const ThermoParams& params, const SurrogateConfig& cfg) {
  std::vector<double> out(params.latent.size(), 0.0);
  glt_backward(upstream, image, params, cfg, out);
  return out;
}

std::vector<std::uint32_t> quantize_thresholds(std::span<const double> thresholds, int adc_bits) {
  check_adc_bits(adc_bits);
  const double fs = full_scale(adc_bits);
  std::vector<std::uint32_t> codes(thresholds.size());
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    const double v = std::clamp(thresholds[i], 0.0, 1.0) * fs;
    codes[i] = static_cast<std::uint32_t>(std::nearbyint(v));  // FE_TONEAREST: ties to even
  }
  return codes;
}

std::size_t code_collisions(std::span<const std::uint32_t> codes) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < codes.size(); ++i) n += codes[i] == codes[i - 1] ? 1 : 0;
  return n;
}

ThresholdTable ThresholdTable::from_params(const ThermoParams& params, int adc_bits) {
  ThresholdTable t;
  t.adc_bits = adc_bits;
  t.planes = params.planes;
  for (std::size_t c = 0; c < params.channels; ++c) {
    t.codes.push_back(quantize_thresholds(params.thresholds(c), adc_bits));
  }
  return t;
}

std::vector<std::vector<double>> ThresholdTable::dequantized() const {
  const double fs = full_scale(adc_bits);
  std::vector<std::vector<double>> out;
  for (const auto& ch : codes) {
    std::vector<double> t(ch.size());
    for (std::size_t i = 0; i < ch.size(); ++i) t[i] = static_cast<double>(ch[i]) / fs;
    out.push_back(std::move(t));
  }
  return out;
}

std::string threshold_table_to_text(const ThresholdTable& t) {
  std::ostringstream os;
  os << "thermobnn-thresholds " << kTableVersion << "\n"
     << "adc_bits " << t.adc_bits << "\n"
     << "planes " << t.planes << "\n"
     << "channels " << t.codes.size() << "\n";
  for (std::size_t c = 0; c < t.codes.size(); ++c) {
    os << c;
    for (auto v : t.codes[c]) os << ' ' << v;
    os << '\n';
  }
  return os.str();
}

ThresholdTable threshold_table_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string tag;
  std::uint32_t version = 0;
  std::size_t channels = 0;
  ThresholdTable t;
  auto expect = [&](const char* key) {
    if (!(is >> tag) || tag != key) throw LoadError(std::string("threshold table: expected '") + key + "'");
  };
  expect("thermobnn-thresholds");
  if (!(is >> version) || version != kTableVersion) throw LoadError("threshold table: unsupported version");
  expect("adc_bits");
  is >> t.adc_bits;
  expect("planes");
  is >> t.planes;
  expect("channels");
  is >> channels;
  if (!is) throw LoadError("threshold table: malformed header");
  check_adc_bits(t.adc_bits);
  const std::uint32_t max_code = (1U << t.adc_bits) - 1U;
  for (std::size_t c = 0; c < channels; ++c) {
    std::size_t idx = 0;
    if (!(is >> idx) || idx != c) throw LoadError("threshold table: bad channel index on row " + std::to_string(c));
    std::vector<std::uint32_t> row(t.planes);
    for (auto& v : row) {
      if (!(is >> v) || v > max_code) throw LoadError("threshold table: bad code in channel " + std::to_string(c));
    }
    t.codes.push_back(std::move(row));
  }
  return t;
}

std::vector<std::uint8_t> threshold_table_to_binary(const ThresholdTable& t) {
  io::ByteWriter w;
  w.put_magic(kTableMagic);
  w.put<std::uint32_t>(kTableVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.adc_bits));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.planes));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.codes.size()));
  for (const auto& ch : t.codes) {
    for (auto v : ch) w.put<std::uint16_t>(static_cast<std::uint16_t>(v));
  }
  return w.take();
}

ThresholdTable threshold_table_from_binary(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "threshold table");
  r.expect_magic(kTableMagic);
  if (r.get<std::uint32_t>("version") != kTableVersion) r.fail("version", "unsupported version");
  ThresholdTable t;
  t.adc_bits = static_cast<int>(r.get<std::uint32_t>("adc_bits"));
  if (t.adc_bits < 1 || t.adc_bits > 16) r.fail("adc_bits", "out of range");
  t.planes = r.get<std::uint32_t>("planes");
  const auto channels = r.get<std::uint32_t>("channels");
  const std::uint32_t max_code = (1U << t.adc_bits) - 1U;
  for (std::uint32_t c = 0; c < channels; ++c) {
    std::vector<std::uint32_t> row(t.planes);
    for (auto& v : row) {
      v = r.get<std::uint16_t>("code");
      if (v > max_code) r.fail("code", "code exceeds ADC range");
    }
    t.codes.push_back(std::move(row));
  }
  if (!r.at_end()) r.fail("trailer", "trailing bytes");
  return t;
}

ThresholdTable read_threshold_table(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  if (bytes.size() >= 4 && std::equal(kTableMagic.begin(), kTableMagic.end(), bytes.begin())) {
    return threshold_table_from_binary(bytes);
  }
  return threshold_table_from_text(std::string(bytes.begin(), bytes.end()));
}

std::vector<std::uint8_t> encoded_planes_to_bytes(const EncodedPlanes& e) {
  const auto& sh = e.planes.shape();
  if (sh.size() != 3 || e.planes_per_channel == 0 || sh[0] % e.planes_per_channel != 0) {
    throw DimensionError("encoded planes must be (C*M) x H x W");
  }
  io::ByteWriter w;
  w.put_magic("TBEP");
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(e.kind));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(sh[0] / e.planes_per_channel));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(e.planes_per_channel));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(sh[1]));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(sh[2]));
  const auto bits = e.planes.to_bytes();
  w.put_bytes(bits);
  return w.take();
}

EncodedPlanes encoded_planes_from_bytes(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "plane file");
  r.expect_magic("TBEP");
  if (r.get<std::uint32_t>("version") != 1) r.fail("version", "unsupported version");
  const auto kind = r.get<std::uint32_t>("kind");
  if (kind > 2) r.fail("kind", "unknown encoding kind");
  const std::size_t c = r.get<std::uint32_t>("channels");
  const std::size_t m = r.get<std::uint32_t>("planes");
  const std::size_t h = r.get<std::uint32_t>("height");
  const std::size_t w = r.get<std::uint32_t>("width");
  if (m == 0) r.fail("planes", "zero planes per channel");
  const std::size_t n = c * m * h * w;
  const auto body = r.get_bytes((n + 7) / 8, "bits");
  if (!r.at_end()) r.fail("bits", "unexpected trailing bytes");
  EncodedPlanes e;
  e.kind = static_cast<EncodingKind>(kind);
  e.planes_per_channel = m;
  e.planes = BitTensor::from_bytes(Shape{c * m, h, w}, BitSemantics::plane01, body);
  return e;
}

std::string encoded_planes_dump(const EncodedPlanes& e) {
  const auto& sh = e.planes.shape();
  const std::size_t m = e.planes_per_channel;
  std::string out;
  for (std::size_t p = 0; p < sh[0]; ++p) {
    for (std::size_t y = 0; y < sh[1]; ++y) {
      out += "c" + std::to_string(p / m) + " p" + std::to_string(p % m + 1) + " r" + std::to_string(y) + " ";
      for (std::size_t x = 0; x < sh[2]; ++x) out += e.planes.bit((p * sh[1] + y) * sh[2] + x) ? '1' : '0';
      out += '\n';
    }
  }
  return out;
}

}  // namespace thermobnn
