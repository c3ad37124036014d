#pragma once

#include <stdexcept>
#include <string>

namespace hgformer {

// Invalid configuration or arguments: bad sizes, unknown tags, malformed files.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Tensor shapes that do not fit the operation.
class DimensionError : public ConfigError {
 public:
  explicit DimensionError(const std::string& what) : ConfigError(what) {}
};

// Caller broke an API contract (e.g. backward on a non-scalar).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// NaN/Inf produced, gradient check failure, diverged training.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace hgformer
