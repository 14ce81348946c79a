#pragma once

#include <stdexcept>
#include <string>

namespace opfuse {

// Thrown when an operation receives data that violates its contract
// (shape mismatch, non-finite values, zero-norm input without epsilon).
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

// Thrown for bad configuration: malformed JSON, unknown keys, invalid
// cost-model rates, inconsistent block dimensions.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool condition, const char* what) {
  if (!condition) throw InvalidInput(what);
}

inline void require(bool condition, const std::string& what) {
  if (!condition) throw InvalidInput(what);
}

}  // namespace detail
}  // namespace opfuse
