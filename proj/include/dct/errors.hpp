#pragma once

#include <stdexcept>

namespace dct {

/// Invalid or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A checkpoint or dataset file that cannot be read, is corrupt, or does not
/// match what the caller expects.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dct
