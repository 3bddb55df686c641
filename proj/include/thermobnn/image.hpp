// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace thermobnn {

/// Planar (channel-major) image: element (c, y, x) is at (c * height + y) * width + x.
template <typename T>
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, T fill = T{})
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  T& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
  std::size_t plane_size() const noexcept { return height * width; }

  friend bool operator==(const Image&, const Image&) = default;
};

using ImageF = Image<float>;
/// Integer pixels of up to 16 bits (the ADC bit depth decides the range).
using ImageU16 = Image<std::uint16_t>;

}  // namespace thermobnn
