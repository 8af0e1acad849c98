#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cag {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes or feature dimensions do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text input. `offset()` is the byte position at which
/// decoding failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Wrong magic bytes or an unsupported format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class FileError : public Error {
 public:
  FileError(const std::string& what, std::string path)
      : Error(what + ": " + path), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// A training stage cannot start (e.g. fewer than two valid anchors).
class StageError : public Error {
 public:
  using Error::Error;
};

/// A loss became NaN or infinite during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cag
