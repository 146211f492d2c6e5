#pragma once

// Little-endian binary encoding, SHA-256 and base64 helpers shared by the
// model, checkpoint, dataset and mesh-export formats.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eet/numerics.hpp"

namespace eet::io {

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void raw(std::span<const std::uint8_t> bytes);
  void magic(std::string_view m);
  /// u16 length prefix + bytes.
  void str16(std::string_view s);
  /// u32 length prefix + bytes.
  void str32(std::string_view s);
  /// Matrix values narrowed to f32, row-major.
  void f32_array(const Matrix& m);

  const Bytes& bytes() const { return buf_; }
  Bytes take() { return std::move(buf_); }

 private:
  Bytes buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::span<const std::uint8_t> raw(std::size_t n);
  /// Reads and checks a magic tag.
  void expect_magic(std::string_view m);
  std::string str16();
  std::string str32();
  Matrix f32_array(std::size_t rows, std::size_t cols);

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> take(std::size_t n);

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data);
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string to_hex(std::span<const std::uint8_t> data);

std::string base64_encode(std::span<const std::uint8_t> data);
Bytes base64_decode(std::string_view text);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace eet::io
