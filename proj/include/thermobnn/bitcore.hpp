// SPDX-License-Identifier: Apache-2.0
//
// Bit-packed tensors and exact XNOR/popcount kernels.
//
// A BitTensor stores one bit per element. Under `plane01` semantics a bit is
// the value itself (0 or 1); under `signed_pm1` semantics bit b stands for
// 2b - 1, so a cleared bit is -1 and a set bit is +1. Bits are packed into
// 64-bit words row by row, where a row is the innermost dimension; every row
// starts on a word boundary and the tail bits of its last word stay zero.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace thermobnn {

enum class BitSemantics : std::uint8_t { plane01 = 0, signed_pm1 = 1 };

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);

class BitTensor {
 public:
  using Word = std::uint64_t;
  static constexpr std::size_t kWordBits = 64;

  BitTensor() = default;
  BitTensor(Shape shape, BitSemantics semantics);

  /// Packs element values: 0/1 for plane01, -1/+1 for signed_pm1.
  static BitTensor from_values(Shape shape, std::span<const std::int8_t> values,
                               BitSemantics semantics);

  const Shape& shape() const noexcept { return shape_; }
  BitSemantics semantics() const noexcept { return semantics_; }
  std::size_t numel() const noexcept { return numel_; }
  std::size_t row_length() const noexcept { return row_len_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t words_per_row() const noexcept { return words_per_row_; }

  bool bit(std::size_t flat) const noexcept {
    const std::size_t r = flat / row_len_, c = flat % row_len_;
    return (words_[r * words_per_row_ + c / kWordBits] >> (c % kWordBits)) & 1U;
  }
  void set_bit(std::size_t flat, bool on) noexcept {
    const std::size_t r = flat / row_len_, c = flat % row_len_;
    Word& w = words_[r * words_per_row_ + c / kWordBits];
    const Word mask = Word{1} << (c % kWordBits);
    w = on ? (w | mask) : (w & ~mask);
  }

  /// Arithmetic value of an element under the tensor's semantics.
  int value(std::size_t flat) const noexcept {
    const int b = bit(flat) ? 1 : 0;
    return semantics_ == BitSemantics::signed_pm1 ? 2 * b - 1 : b;
  }

  std::vector<std::int8_t> unpack() const;

  std::span<const Word> row_words(std::size_t r) const noexcept {
    return {words_.data() + r * words_per_row_, words_per_row_};
  }
  std::span<const Word> words() const noexcept { return words_; }

  /// Dense little-endian byte stream: element k lives in byte k/8, bit k%8.
  /// Independent of the in-memory word size; length is ceil(numel/8).
  std::vector<std::uint8_t> to_bytes() const;
  static BitTensor from_bytes(Shape shape, BitSemantics semantics,
                              std::span<const std::uint8_t> bytes);

  /// Returns a copy with every bit inverted (padding stays zero).
  BitTensor complement() const;

  friend bool operator==(const BitTensor& a, const BitTensor& b) = default;

 private:
  Shape shape_;
  BitSemantics semantics_ = BitSemantics::plane01;
  std::size_t numel_ = 0;
  std::size_t row_len_ = 1;
  std::size_t rows_ = 0;
  std::size_t words_per_row_ = 0;
  std::vector<Word> words_;
};

struct IntTensor {
  Shape shape;
  std::vector<std::int32_t> data;

  IntTensor() = default;
  explicit IntTensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0) {}

  friend bool operator==(const IntTensor&, const IntTensor&) = default;
};

/// Sum of a_i * b_i over +-1 values: 2 * popcount(XNOR(a, b)) - n.
std::int64_t xnor_dot(const BitTensor& a, const BitTensor& b);

struct ConvParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Grouped binary cross-correlation.
///
/// `x` is C_in x H x W and may be signed (+-1 activations) or plane01
/// (thermometer planes). `w` is C_out x C_in/g x k x k, signed. Padded
/// positions hold bit 0, i.e. -1 for signed inputs and 0 for plane inputs.
/// Output element (o, y, x) is the exact integer correlation.
IntTensor bin_conv2d(const BitTensor& x, const BitTensor& w, const ConvParams& p);

/// Weights re-laid out as one channel-bit column per (o, ky, kx), reusable
/// across calls.
struct PackedConvWeights {
  std::size_t cout = 0, cin_per_group = 0, kernel = 0, words_per_column = 0;
  std::vector<BitTensor::Word> words;
};
PackedConvWeights pack_conv_weights(const BitTensor& w);
IntTensor bin_conv2d(const BitTensor& x, const PackedConvWeights& w, const ConvParams& p);

/// Signed bit = 1 iff x >= tau[channel], channel being dimension 0.
BitTensor heaviside_threshold(const IntTensor& x, std::span<const std::int32_t> tau);

/// Row-wise xnor_dot of `x` (length n) against every row of `w` (m x n).
IntTensor popcount_linear(const BitTensor& x, const BitTensor& w);

/// Worker threads used by bin_conv2d; results never depend on this value.
void set_kernel_threads(unsigned n);
unsigned kernel_threads();

}  // namespace thermobnn
