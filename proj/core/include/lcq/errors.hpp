#pragma once
#include <stdexcept>
#include <string>

namespace lcq {

// Base for everything thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inconsistent tensor shapes, bad group layouts, invalid configs.
struct ShapeError : Error {
  using Error::Error;
};

// Non-finite values, diverging optimization, failed numeric checks.
struct NumericError : Error {
  using Error::Error;
};

// Malformed files. Carries the byte offset where validation failed.
struct FormatError : Error {
  FormatError(std::size_t offset, const std::string& what)
      : Error("offset " + std::to_string(offset) + ": " + what), offset(offset) {}
  std::size_t offset;
};

}  // namespace lcq
