// SPDX-License-Identifier: Apache-2.0
//
// Little-endian byte streams, atomic file writes and a stable content hash.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "thermobnn/errors.hpp"

namespace thermobnn::io {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

class ByteWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  template <typename T>
  void put_array(std::span<const T> v) {
    put<std::uint64_t>(v.size());
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    buf_.insert(buf_.end(), p, p + v.size_bytes());
  }
  void put_magic(std::string_view m) { buf_.insert(buf_.end(), m.begin(), m.end()); }

  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }
  std::vector<std::uint8_t> take() noexcept { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Reader that reports the byte offset of whatever it fails on.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string what)
      : data_(data), what_(std::move(what)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get(const char* field) {
    need(sizeof(T), field);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> get_bytes(std::size_t n, const char* field) {
    need(n, field);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string(const char* field) {
    const auto n = get<std::uint32_t>(field);
    auto b = get_bytes(n, field);
    return {b.begin(), b.end()};
  }
  template <typename T>
  std::vector<T> get_array(const char* field) {
    const auto n = get<std::uint64_t>(field);
    if (n > (data_.size() - pos_) / sizeof(T)) fail(field, "array length exceeds file size");
    std::vector<T> v(n);
    auto b = get_bytes(n * sizeof(T), field);
    std::memcpy(v.data(), b.data(), b.size());
    return v;
  }
  void expect_magic(std::string_view magic) {
    auto b = get_bytes(magic.size(), "magic");
    if (std::string_view(reinterpret_cast<const char*>(b.data()), b.size()) != magic) {
      pos_ -= magic.size();
      fail("magic", "expected '" + std::string(magic) + "'");
    }
  }

  std::size_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }
  [[noreturn]] void fail(const char* field, const std::string& why) const {
    throw LoadError(what_ + ": " + why + " (field '" + field + "' at byte offset " +
                    std::to_string(pos_) + ")");
  }

 private:
  void need(std::size_t n, const char* field) const {
    if (data_.size() - pos_ < n) fail(field, "unexpected end of data");
  }

  std::span<const std::uint8_t> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

/// Writes to a sibling temporary and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
/// Locale-independent fixed-point formatting.
std::string fixed(double v, int digits);

}  // namespace thermobnn::io
