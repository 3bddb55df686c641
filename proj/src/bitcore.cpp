// SPDX-License-Identifier: Apache-2.0
#include "thermobnn/bitcore.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <functional>
#include <numeric>
#include <sstream>
#include <thread>

#include "thermobnn/errors.hpp"

namespace thermobnn {

namespace {

using Word = BitTensor::Word;
constexpr std::size_t kWordBits = BitTensor::kWordBits;

std::atomic<unsigned> g_threads{1};

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

Word tail_mask(std::size_t bits) {
  const std::size_t r = bits % kWordBits;
  return r == 0 ? ~Word{0} : (Word{1} << r) - 1;
}

// Runs fn(begin, end) over [0, n) split into contiguous chunks.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  const unsigned t = std::min<std::size_t>(g_threads.load(), std::max<std::size_t>(n, 1));
  if (t <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::jthread> workers;
  const std::size_t chunk = (n + t - 1) / t;
  for (unsigned i = 0; i < t; ++i) {
    const std::size_t b = i * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    workers.emplace_back([&fn, b, e] { fn(b, e); });
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void set_kernel_threads(unsigned n) { g_threads.store(std::max(1U, n)); }
unsigned kernel_threads() { return g_threads.load(); }

BitTensor::BitTensor(Shape shape, BitSemantics semantics)
    : shape_(std::move(shape)), semantics_(semantics) {
  numel_ = shape_numel(shape_);
  row_len_ = shape_.empty() ? 1 : shape_.back();
  if (row_len_ == 0) {
    rows_ = 0;
    words_per_row_ = 0;
    return;
  }
  rows_ = numel_ / row_len_;
  words_per_row_ = (row_len_ + kWordBits - 1) / kWordBits;
  words_.assign(rows_ * words_per_row_, 0);
}

BitTensor BitTensor::from_values(Shape shape, std::span<const std::int8_t> values,
                                 BitSemantics semantics) {
  BitTensor t(std::move(shape), semantics);
  if (values.size() != t.numel()) {
    throw DimensionError("BitTensor::from_values: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(t.shape()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int v = values[i];
    bool on = false;
    if (semantics == BitSemantics::signed_pm1) {
      if (v != 1 && v != -1) throw DomainError("signed BitTensor values must be -1 or +1");
      on = v == 1;
    } else {
      if (v != 0 && v != 1) throw DomainError("plane BitTensor values must be 0 or 1");
      on = v == 1;
    }
    t.set_bit(i, on);
  }
  return t;
}

std::vector<std::int8_t> BitTensor::unpack() const {
  std::vector<std::int8_t> out(numel_);
  for (std::size_t i = 0; i < numel_; ++i) out[i] = static_cast<std::int8_t>(value(i));
  return out;
}

std::vector<std::uint8_t> BitTensor::to_bytes() const {
  std::vector<std::uint8_t> out((numel_ + 7) / 8, 0);
  for (std::size_t i = 0; i < numel_; ++i) {
    if (bit(i)) out[i / 8] |= static_cast<std::uint8_t>(1U << (i % 8));
  }
  return out;
}

BitTensor BitTensor::from_bytes(Shape shape, BitSemantics semantics,
                                std::span<const std::uint8_t> bytes) {
  BitTensor t(std::move(shape), semantics);
  if (bytes.size() != (t.numel() + 7) / 8) {
    throw DimensionError("BitTensor::from_bytes: expected " + std::to_string((t.numel() + 7) / 8) +
                         " bytes, got " + std::to_string(bytes.size()));
  }
  for (std::size_t i = 0; i < t.numel(); ++i) t.set_bit(i, (bytes[i / 8] >> (i % 8)) & 1U);
  return t;
}

BitTensor BitTensor::complement() const {
  BitTensor out = *this;
  const Word last = tail_mask(row_len_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = 0; k < words_per_row_; ++k) {
      Word& w = out.words_[r * words_per_row_ + k];
      w = ~w;
      if (k + 1 == words_per_row_) w &= last;
    }
  }
  return out;
}

std::int64_t xnor_dot(const BitTensor& a, const BitTensor& b) {
  if (a.semantics() != BitSemantics::signed_pm1 || b.semantics() != BitSemantics::signed_pm1) {
    throw DimensionError("xnor_dot: both operands must use signed semantics");
  }
  if (a.numel() != b.numel()) {
    throw DimensionError("xnor_dot: length mismatch " + std::to_string(a.numel()) + " vs " +
                         std::to_string(b.numel()));
  }
  if (a.shape() != b.shape()) {
    throw DimensionError("xnor_dot: layout mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const Word last = tail_mask(a.row_length());
  std::int64_t matches = 0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto wa = a.row_words(r), wb = b.row_words(r);
    for (std::size_t k = 0; k < wa.size(); ++k) {
      Word x = ~(wa[k] ^ wb[k]);
      if (k + 1 == wa.size()) x &= last;
      matches += std::popcount(x);
    }
  }
  return 2 * matches - static_cast<std::int64_t>(a.numel());
}

IntTensor popcount_linear(const BitTensor& x, const BitTensor& w) {
  if (x.semantics() != BitSemantics::signed_pm1 || w.semantics() != BitSemantics::signed_pm1) {
    throw DimensionError("popcount_linear: operands must use signed semantics");
  }
  if (w.shape().size() != 2) throw DimensionError("popcount_linear: weights must be m x n");
  const std::size_t m = w.shape()[0], n = w.shape()[1];
  if (x.numel() != n || x.rows() != 1) {
    throw DimensionError("popcount_linear: input length " + std::to_string(x.numel()) +
                         " does not match weight width " + std::to_string(n));
  }
  IntTensor out(Shape{m});
  const Word last = tail_mask(n);
  auto xs = x.row_words(0);
  for (std::size_t i = 0; i < m; ++i) {
    auto ws = w.row_words(i);
    std::int64_t matches = 0;
    for (std::size_t k = 0; k < ws.size(); ++k) {
      Word v = ~(xs[k] ^ ws[k]);
      if (k + 1 == ws.size()) v &= last;
      matches += std::popcount(v);
    }
    out.data[i] = static_cast<std::int32_t>(2 * matches - static_cast<std::int64_t>(n));
  }
  return out;
}

PackedConvWeights pack_conv_weights(const BitTensor& w) {
  if (w.shape().size() != 4) throw DimensionError("bin_conv2d: weights must be O x I x k x k");
  if (w.semantics() != BitSemantics::signed_pm1) {
    throw DimensionError("bin_conv2d: weights must use signed semantics");
  }
  PackedConvWeights pw;
  pw.cout = w.shape()[0];
  pw.cin_per_group = w.shape()[1];
  pw.kernel = w.shape()[2];
  if (w.shape()[3] != pw.kernel) throw DimensionError("bin_conv2d: kernel must be square");
  const std::size_t cg = pw.cin_per_group, k = pw.kernel;
  pw.words_per_column = (cg + kWordBits - 1) / kWordBits;
  pw.words.assign(pw.cout * k * k * pw.words_per_column, 0);
  const auto unpacked = w.unpack();
  std::size_t flat = 0;
  for (std::size_t o = 0; o < pw.cout; ++o) {
    for (std::size_t cl = 0; cl < cg; ++cl) {
      for (std::size_t kk = 0; kk < k * k; ++kk, ++flat) {
        if (unpacked[flat] > 0) {
          pw.words[(o * k * k + kk) * pw.words_per_column + cl / kWordBits] |= Word{1} << (cl % kWordBits);
        }
      }
    }
  }
  return pw;
}

IntTensor bin_conv2d(const BitTensor& x, const BitTensor& w, const ConvParams& p) {
  return bin_conv2d(x, pack_conv_weights(w), p);
}

IntTensor bin_conv2d(const BitTensor& x, const PackedConvWeights& w, const ConvParams& p) {
  if (x.shape().size() != 3) throw DimensionError("bin_conv2d: input must be C x H x W");
  if (p.stride == 0) throw ConfigError("bin_conv2d: stride must be positive");
  const std::size_t cin = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const std::size_t cout = w.cout, cg = w.cin_per_group, k = w.kernel;
  const std::size_t g = p.groups;
  if (g == 0 || cin % g != 0 || cout % g != 0) {
    throw ConfigError("bin_conv2d: channels " + std::to_string(cin) + "->" +
                      std::to_string(cout) + " not divisible by groups " + std::to_string(g));
  }
  if (cin / g != cg) {
    throw DimensionError("bin_conv2d: weight expects " + std::to_string(cg) +
                         " input channels per group, input provides " + std::to_string(cin / g));
  }
  const std::size_t hp = h + 2 * p.padding, wp = wd + 2 * p.padding;
  if (hp < k || wp < k) throw DimensionError("bin_conv2d: kernel larger than padded input");
  const std::size_t ho = (hp - k) / p.stride + 1, wo = (wp - k) / p.stride + 1;
  const std::size_t wpc = w.words_per_column;
  const Word last = tail_mask(cg);
  const bool signed_in = x.semantics() == BitSemantics::signed_pm1;
  const std::size_t opg = cout / g;

  // Channel-packed copy: one bit column of cg channels per (padded) pixel.
  std::vector<Word> xpack(g * hp * wp * wpc, 0);
  for (std::size_t c = 0; c < cin; ++c) {
    const std::size_t gi = c / cg, cl = c % cg;
    const Word bitmask = Word{1} << (cl % kWordBits);
    for (std::size_t yy = 0; yy < h; ++yy) {
      const auto row = x.row_words(c * h + yy);
      for (std::size_t xx = 0; xx < wd; ++xx) {
        if (!((row[xx / kWordBits] >> (xx % kWordBits)) & 1U)) continue;
        const std::size_t pix = (gi * hp + yy + p.padding) * wp + xx + p.padding;
        xpack[pix * wpc + cl / kWordBits] |= bitmask;
      }
    }
  }

  IntTensor out(Shape{cout, ho, wo});
  const auto n_field = static_cast<std::int64_t>(cg * k * k);
  parallel_for(cout, [&](std::size_t ob, std::size_t oe) {
    for (std::size_t o = ob; o < oe; ++o) {
      const std::size_t gi = o / opg;
      const Word* wbase = w.words.data() + o * k * k * wpc;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          std::int64_t acc = 0;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::size_t row = (gi * hp + oy * p.stride + ky) * wp + ox * p.stride;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const Word* xv = xpack.data() + (row + kx) * wpc;
              const Word* wv = wbase + (ky * k + kx) * wpc;
              for (std::size_t q = 0; q < wpc; ++q) {
                const Word m = q + 1 == wpc ? last : ~Word{0};
                if (signed_in) {
                  acc += std::popcount(~(xv[q] ^ wv[q]) & m);
                } else {
                  acc += std::popcount(xv[q] & wv[q]) - std::popcount(xv[q] & ~wv[q] & m);
                }
              }
            }
          }
          if (signed_in) acc = 2 * acc - n_field;
          out.data[(o * ho + oy) * wo + ox] = static_cast<std::int32_t>(acc);
        }
      }
    }
  });
  return out;
}

BitTensor heaviside_threshold(const IntTensor& x, std::span<const std::int32_t> tau) {
  if (x.shape.empty()) throw DimensionError("heaviside_threshold: empty shape");
  const std::size_t c = x.shape[0];
  if (tau.size() != c) {
    throw DimensionError("heaviside_threshold: " + std::to_string(tau.size()) +
                         " thresholds for " + std::to_string(c) + " channels");
  }
  BitTensor out(x.shape, BitSemantics::signed_pm1);
  const std::size_t per = c == 0 ? 0 : x.data.size() / c;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t flat = ch * per + i;
      if (x.data[flat] >= tau[ch]) out.set_bit(flat, true);
    }
  }
  return out;
}

}  // namespace thermobnn
