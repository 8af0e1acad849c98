#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cag::io {

/// Little-endian byte sink. Everything is buffered in memory and written to
/// disk in one go by `write_file`.
class Writer {
 public:
  void bytes(std::span<const std::uint8_t> data);
  void magic(std::string_view four_cc);
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);

  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
  std::vector<std::uint8_t> release() noexcept { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Little-endian byte source over an in-memory buffer. Every read past the end
/// throws ParseError carrying the offset where the read started.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) noexcept : data_(data) {}

  /// Throws VersionError if the next four bytes differ from `four_cc`.
  void expect_magic(std::string_view four_cc, std::string_view what);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::span<const std::uint8_t> bytes(std::size_t n);

  std::uint64_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  /// Throws ParseError unless the whole buffer was consumed.
  void expect_end(std::string_view what) const;

 private:
  std::span<const std::uint8_t> take(std::size_t n);

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> data);

/// 64-bit FNV-1a, used for checksumming artifacts in logs and tests.
std::uint64_t fnv1a64(std::span<const std::uint8_t> data) noexcept;

}  // namespace cag::io
