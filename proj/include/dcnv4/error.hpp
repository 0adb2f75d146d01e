#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dcnv4 {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A tensor dimension was zero or negative.
class InvalidShapeError : public Error {
 public:
  using Error::Error;
};

// Operands disagree on a named axis.
class DimensionError : public Error {
 public:
  DimensionError(std::string axis, const std::string& what)
      : Error("dimension mismatch on axis '" + axis + "': " + what), axis_(std::move(axis)) {}

  const std::string& axis() const noexcept { return axis_; }

 private:
  std::string axis_;
};

// Malformed DCNT fixture; offset() is the byte position of the bad field.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// The optimized kernel was asked for something only the reference serves.
class UnsupportedConfigurationError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class PlanError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace dcnv4
