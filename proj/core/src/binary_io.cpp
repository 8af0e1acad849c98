#include "cag/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cag/errors.hpp"

namespace cag::io {
namespace {

template <typename U>
void put_le(std::vector<std::uint8_t>& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

template <typename U>
U get_le(std::span<const std::uint8_t> b) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(b[i]) << (8 * i);
  }
  return v;
}

}  // namespace

void Writer::bytes(std::span<const std::uint8_t> data) {
  buf_.insert(buf_.end(), data.begin(), data.end());
}

void Writer::magic(std::string_view four_cc) {
  for (char c : four_cc) buf_.push_back(static_cast<std::uint8_t>(c));
}

void Writer::u8(std::uint8_t v) { buf_.push_back(v); }
void Writer::u16(std::uint16_t v) { put_le(buf_, v); }
void Writer::u32(std::uint32_t v) { put_le(buf_, v); }
void Writer::u64(std::uint64_t v) { put_le(buf_, v); }
void Writer::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void Writer::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }

std::span<const std::uint8_t> Reader::take(std::size_t n) {
  if (n > remaining()) {
    throw ParseError("unexpected end of data: need " + std::to_string(n) +
                         " bytes, have " + std::to_string(remaining()),
                     pos_);
  }
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

void Reader::expect_magic(std::string_view four_cc, std::string_view what) {
  const auto start = pos_;
  if (remaining() < four_cc.size()) {
    throw ParseError("truncated " + std::string(what) + " header", start);
  }
  auto got = take(four_cc.size());
  if (std::memcmp(got.data(), four_cc.data(), four_cc.size()) != 0) {
    throw VersionError("not a " + std::string(what) + " file: bad magic bytes");
  }
}

std::uint8_t Reader::u8() { return take(1)[0]; }
std::uint16_t Reader::u16() { return get_le<std::uint16_t>(take(2)); }
std::uint32_t Reader::u32() { return get_le<std::uint32_t>(take(4)); }
std::uint64_t Reader::u64() { return get_le<std::uint64_t>(take(8)); }
float Reader::f32() { return std::bit_cast<float>(get_le<std::uint32_t>(take(4))); }
double Reader::f64() { return std::bit_cast<double>(get_le<std::uint64_t>(take(8))); }
std::span<const std::uint8_t> Reader::bytes(std::size_t n) { return take(n); }

void Reader::expect_end(std::string_view what) const {
  if (pos_ != data_.size()) {
    throw ParseError("trailing bytes after " + std::string(what), pos_);
  }
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open for reading", path);
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (in.bad()) throw FileError("read failed", path);
  return data;
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open for writing", path);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  if (!out) throw FileError("write failed", path);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> data) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (auto b : data) {
    h ^= b;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace cag::io
