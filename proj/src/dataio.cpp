// SPDX-License-Identifier: Apache-2.0
#include "thermobnn/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "thermobnn/errors.hpp"
#include "thermobnn/io.hpp"

namespace thermobnn {

namespace {

constexpr std::string_view kMagic = "TBDS";
constexpr std::uint32_t kVersion = 1;

std::uint32_t max_value(int adc_bits) { return (1U << adc_bits) - 1U; }

// Skips whitespace and '#' comments in a netpbm header.
std::size_t pnm_token(std::span<const std::uint8_t> b, std::size_t& pos, const std::string& file) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t v = 0, digits = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos++] - '0');
    ++digits;
  }
  if (digits == 0) throw LoadError(file + ": malformed netpbm header at byte offset " + std::to_string(pos));
  return v;
}

}  // namespace

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == s) out.push_back(i);
  }
  return out;
}

void Dataset::validate() const {
  if (adc_bits < 1 || adc_bits > 16) throw LoadError("dataset: adc_bits out of range");
  if (labels.size() != images.size() || splits.size() != images.size()) {
    throw LoadError("dataset: images, labels and splits differ in length");
  }
  const std::uint32_t vmax = max_value(adc_bits);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    if (im.channels != channels || im.height != height || im.width != width) {
      throw LoadError("dataset: record " + std::to_string(i) + " has mismatched dimensions");
    }
    if (labels[i] >= num_classes) {
      throw LoadError("dataset: record " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                      " >= class count " + std::to_string(num_classes));
    }
    for (auto v : im.data) {
      if (v > vmax) throw LoadError("dataset: record " + std::to_string(i) + " has a pixel above " + std::to_string(vmax));
    }
  }
}

std::vector<std::uint8_t> dataset_to_bytes(const Dataset& ds) {
  ds.validate();
  io::ByteWriter w;
  const bool wide = ds.adc_bits > 8;
  w.put_magic(kMagic);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(wide ? 2 : 1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.adc_bits));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.num_classes));
  for (auto l : ds.labels) w.put<std::uint32_t>(l);
  for (auto s : ds.splits) w.put<std::uint8_t>(static_cast<std::uint8_t>(s));
  for (const auto& im : ds.images) {
    for (auto v : im.data) {
      if (wide) {
        w.put<std::uint16_t>(v);
      } else {
        w.put<std::uint8_t>(static_cast<std::uint8_t>(v));
      }
    }
  }
  return w.take();
}

Dataset dataset_from_bytes(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "dataset");
  r.expect_magic(kMagic);
  if (r.get<std::uint32_t>("version") != kVersion) r.fail("version", "unsupported version");
  const auto dtype = r.get<std::uint32_t>("dtype");
  if (dtype != 1 && dtype != 2) r.fail("dtype", "unknown pixel type");
  Dataset ds;
  ds.adc_bits = static_cast<int>(r.get<std::uint32_t>("adc_bits"));
  if (ds.adc_bits < 1 || ds.adc_bits > (dtype == 1 ? 8 : 16)) r.fail("adc_bits", "inconsistent with dtype");
  const auto count = r.get<std::uint32_t>("count");
  ds.channels = r.get<std::uint32_t>("channels");
  ds.height = r.get<std::uint32_t>("height");
  ds.width = r.get<std::uint32_t>("width");
  ds.num_classes = r.get<std::uint32_t>("num_classes");
  const std::size_t per = ds.channels * ds.height * ds.width;
  const std::size_t need = static_cast<std::size_t>(count) * (5 + per * dtype);
  if (bytes.size() - r.offset() != need) {
    r.fail("count", "header promises " + std::to_string(need) + " payload bytes, file has " +
                        std::to_string(bytes.size() - r.offset()));
  }
  const std::uint32_t vmax = max_value(ds.adc_bits);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto l = r.get<std::uint32_t>("label");
    if (l >= ds.num_classes) r.fail("label", "record " + std::to_string(i) + " label out of range");
    ds.labels.push_back(l);
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto s = r.get<std::uint8_t>("split");
    if (s > 1) r.fail("split", "record " + std::to_string(i) + " has unknown split tag");
    ds.splits.push_back(static_cast<Split>(s));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    ImageU16 im(ds.channels, ds.height, ds.width);
    for (auto& v : im.data) {
      v = dtype == 1 ? r.get<std::uint8_t>("pixel") : r.get<std::uint16_t>("pixel");
      if (v > vmax) r.fail("pixel", "record " + std::to_string(i) + " pixel exceeds " + std::to_string(vmax));
    }
    ds.images.push_back(std::move(im));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  io::write_file_atomic(path, dataset_to_bytes(ds));
}

ImageU16 read_netpbm(const std::filesystem::path& path, int* adc_bits) {
  const auto b = io::read_file(path);
  const std::string file = path.string();
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6')) {
    throw LoadError(file + ": only binary PGM (P5) and PPM (P6) are supported (byte offset 0)");
  }
  std::size_t pos = 2;
  const std::size_t w = pnm_token(b, pos, file), h = pnm_token(b, pos, file), maxval = pnm_token(b, pos, file);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
    throw LoadError(file + ": invalid netpbm dimensions or maxval near byte offset " + std::to_string(pos));
  }
  ++pos;  // single whitespace before the raster
  const std::size_t c = b[1] == '6' ? 3 : 1, bps = maxval > 255 ? 2 : 1;
  if (b.size() < pos + w * h * c * bps) {
    throw LoadError(file + ": raster truncated at byte offset " + std::to_string(b.size()));
  }
  ImageU16 img(c, h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t off = pos + ((y * w + x) * c + ch) * bps;
        // netpbm samples are big-endian
        const std::uint32_t v = bps == 2 ? (std::uint32_t{b[off]} << 8) | b[off + 1] : b[off];
        if (v > maxval) throw LoadError(file + ": sample above maxval at byte offset " + std::to_string(off));
        img.at(ch, y, x) = static_cast<std::uint16_t>(v);
      }
    }
  }
  if (adc_bits) *adc_bits = static_cast<int>(std::bit_width(maxval));
  return img;
}

void write_netpbm(const ImageU16& img, int adc_bits, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw DimensionError("netpbm needs 1 or 3 channels");
  const std::uint32_t maxval = max_value(adc_bits);
  std::ostringstream os;
  os << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << '\n' << maxval << '\n';
  std::string s = os.str();
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        const auto v = img.at(c, y, x);
        if (maxval > 255) s.push_back(static_cast<char>(v >> 8));
        s.push_back(static_cast<char>(v & 0xFF));
      }
    }
  }
  io::write_text_atomic(path, s);
}

Dataset load_dataset(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw LoadError("dataset path does not exist: " + path.string());
  if (!fs::is_directory(path)) {
    auto ds = dataset_from_bytes(io::read_file(path));
    ds.validate();
    return ds;
  }
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.is_directory()) classes.push_back(e.path());
  }
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw LoadError(path.string() + ": no class folders");

  std::map<std::string, Split> manifest;
  if (fs::exists(path / "splits.txt")) {
    std::istringstream in(io::read_text_file(path / "splits.txt"));
    std::string rel, tag;
    std::size_t line = 0;
    while (in >> rel >> tag) {
      ++line;
      if (tag != "train" && tag != "test") {
        throw LoadError("splits.txt: line " + std::to_string(line) + " has unknown split '" + tag + "'");
      }
      manifest[rel] = tag == "test" ? Split::test : Split::train;
    }
  }

  Dataset ds;
  ds.num_classes = classes.size();
  bool first = true;
  for (std::size_t label = 0; label < classes.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(classes[label])) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      int bits = 8;
      auto img = read_netpbm(f, &bits);
      if (first) {
        ds.channels = img.channels;
        ds.height = img.height;
        ds.width = img.width;
        ds.adc_bits = bits;
        first = false;
      } else if (img.channels != ds.channels || img.height != ds.height || img.width != ds.width) {
        throw LoadError(f.string() + ": record " + std::to_string(ds.size()) + " has mismatched dimensions");
      }
      ds.adc_bits = std::max(ds.adc_bits, bits);
      const auto rel = fs::relative(f, path).generic_string();
      const auto it = manifest.find(rel);
      ds.images.push_back(std::move(img));
      ds.labels.push_back(static_cast<std::uint32_t>(label));
      ds.splits.push_back(it == manifest.end() ? Split::train : it->second);
    }
  }
  ds.validate();
  return ds;
}

ImageF normalize(const ImageU16& img, int adc_bits, double gamma) {
  ImageF out(img.channels, img.height, img.width);
  const double fs = static_cast<double>(max_value(adc_bits));
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    double v = static_cast<double>(img.data[i]) / fs;
    if (gamma != 1.0) v = std::pow(v, gamma);
    out.data[i] = static_cast<float>(v);
  }
  return out;
}

ImageU16 pad_crop(const ImageU16& img, std::size_t pad, std::size_t top, std::size_t left,
                  std::size_t out_h, std::size_t out_w) {
  if (top + out_h > img.height + 2 * pad || left + out_w > img.width + 2 * pad) {
    throw ConfigError("pad_crop: crop window exceeds padded image");
  }
  ImageU16 out(img.channels, out_h, out_w, 0);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const std::size_t sy = y + top;  // in padded coordinates
      if (sy < pad || sy >= pad + img.height) continue;
      for (std::size_t x = 0; x < out_w; ++x) {
        const std::size_t sx = x + left;
        if (sx < pad || sx >= pad + img.width) continue;
        out.at(c, y, x) = img.at(c, sy - pad, sx - pad);
      }
    }
  }
  return out;
}

ImageU16 hflip(const ImageU16& img) {
  ImageU16 out(img.channels, img.height, img.width);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    }
  }
  return out;
}

void cutout(ImageU16& img, std::size_t top, std::size_t left, std::size_t size) {
  if (size > img.height || size > img.width) throw ConfigError("cutout: patch larger than image");
  if (top + size > img.height || left + size > img.width) throw ConfigError("cutout: patch outside image");
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = top; y < top + size; ++y) {
      for (std::size_t x = left; x < left + size; ++x) img.at(c, y, x) = 0;
    }
  }
}

ImageU16 augment(const ImageU16& img, const AugmentConfig& cfg, Rng& rng) {
  const std::size_t ch = cfg.crop_h ? cfg.crop_h : img.height;
  const std::size_t cw = cfg.crop_w ? cfg.crop_w : img.width;
  if (ch > img.height + 2 * cfg.pad || cw > img.width + 2 * cfg.pad) {
    throw ConfigError("augment: crop larger than padded image");
  }
  if (cfg.cutout > ch || cfg.cutout > cw) throw ConfigError("augment: cutout larger than image");
  ImageU16 out = img;
  if (cfg.pad > 0 || ch != img.height || cw != img.width) {
    const std::size_t top = rng.below(img.height + 2 * cfg.pad - ch + 1);
    const std::size_t left = rng.below(img.width + 2 * cfg.pad - cw + 1);
    out = pad_crop(img, cfg.pad, top, left, ch, cw);
  }
  if (cfg.flip && rng.bernoulli(0.5)) out = hflip(out);
  if (cfg.cutout > 0) {
    const std::size_t top = rng.below(out.height - cfg.cutout + 1);
    const std::size_t left = rng.below(out.width - cfg.cutout + 1);
    cutout(out, top, left, cfg.cutout);
  }
  return out;
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.height == 0 || spec.width == 0 || spec.channels == 0) {
    throw ConfigError("make_synthetic: invalid spec");
  }
  Dataset ds;
  ds.adc_bits = 8;
  ds.channels = spec.channels;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.num_classes = spec.classes;
  const double pi = std::numbers::pi;
  const std::size_t n_orient = (spec.classes + 1) / 2;

  auto render = [&](std::size_t label, Rng& rng) {
    // Class prototype: orientation, frequency (cycles per image) and colour offset.
    const double theta = pi * static_cast<double>(label % n_orient) / static_cast<double>(n_orient);
    const double freq = label < n_orient ? 3.0 : 5.5;
    Rng proto(0xC1A55ULL, label);
    std::vector<double> offset(spec.channels), tint(spec.channels);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      offset[c] = proto.uniform(-0.04, 0.04);
      tint[c] = proto.uniform(0.6, 1.0);
    }
    const double th = theta + rng.uniform(-pi / 16, pi / 16);
    const double f = freq * rng.uniform(0.85, 1.15);
    const double phase = rng.uniform(0.0, 2 * pi);
    const double base = rng.uniform(0.3, 0.6);
    const double contrast = rng.uniform(0.08, 0.2);
    const double ct = std::cos(th), st = std::sin(th);
    ImageU16 im(spec.channels, spec.height, spec.width);
    for (std::size_t y = 0; y < spec.height; ++y) {
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double u = (static_cast<double>(x) * ct + static_cast<double>(y) * st) / static_cast<double>(spec.width);
        const double wave = std::sin(2 * pi * f * u + phase);
        for (std::size_t c = 0; c < spec.channels; ++c) {
          double v = base + offset[c] + contrast * tint[c] * wave + spec.noise * rng.normal();
          v = std::clamp(v, 0.0, 1.0);
          im.at(c, y, x) = static_cast<std::uint16_t>(std::lround(v * 255.0));
        }
      }
    }
    return im;
  };

  auto emit = [&](std::size_t count, Split split, std::uint64_t stream_base) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t label = i % spec.classes;
      Rng rng(spec.seed, derive_stream({stream_base, i}));
      ds.images.push_back(render(label, rng));
      ds.labels.push_back(static_cast<std::uint32_t>(label));
      ds.splits.push_back(split);
    }
  };
  emit(spec.train, Split::train, 1);
  emit(spec.test, Split::test, 2);
  return ds;
}

}  // namespace thermobnn
