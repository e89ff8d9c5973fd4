#pragma once

#include <stdexcept>
#include <string>

namespace tcaq {

// Error taxonomy; the C API maps each type to a status code.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
  using Error::Error;
};

// NaN/Inf encountered, or an operation left its numeric domain.
struct NumericError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// A command needs an artifact that an earlier command has not produced.
struct MissingArtifactError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace tcaq
