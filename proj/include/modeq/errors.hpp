#pragma once

#include <stdexcept>
#include <string>

namespace modeq {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor shapes do not satisfy an operation's contract.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(what) {}
};

/// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

/// Malformed serialized artifact (dataset directory, checkpoint, ...).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(what) {}
};

/// Non-finite value where the numeric contract requires finiteness.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what) {}
};

/// Class label outside [0, n_classes).
class LabelError : public Error {
 public:
  explicit LabelError(const std::string& what) : Error(what) {}
};

/// Gradient requested for a node that is not on the tape, or a non-scalar loss.
class TapeError : public Error {
 public:
  explicit TapeError(const std::string& what) : Error(what) {}
};

/// Subset performance table is missing an entry required by the Shapley sum.
class MissingSubsetError : public Error {
 public:
  explicit MissingSubsetError(const std::string& what) : Error(what) {}
};

/// Contribution normalization is undefined (non-positive total contribution).
class DegenerateContributionError : public Error {
 public:
  explicit DegenerateContributionError(const std::string& what) : Error(what) {}
};

}  // namespace modeq
