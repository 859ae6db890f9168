#pragma once

#include <stdexcept>
#include <string>

namespace kad {

// Error taxonomy mirrored by the CLI exit codes:
//   ConfigError -> 2, MissingArtifactError -> 3, NumericError -> 4, IoError -> 5.
// Everything else (ShapeError, logic bugs) maps to the generic failure code 1.

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingArtifactError : std::runtime_error {
  explicit MissingArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace kad
