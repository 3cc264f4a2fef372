#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mrreparam {

/// Base of every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument violated an operation's precondition (shape, range, sign).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A configuration is internally inconsistent or cannot be used.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// D2P/P2P (or model kind) of two artifacts disagree.
class ModeMismatch : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// A file was read but does not follow its format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A file ends early or fails its checksum.
class CorruptionError : public FormatError {
 public:
  CorruptionError(const std::string& what, std::uint64_t offset)
      : FormatError(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mrreparam
