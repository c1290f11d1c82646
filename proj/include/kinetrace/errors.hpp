#pragma once

#include <stdexcept>
#include <string>

namespace kinetrace {

// Bad or inconsistent configuration (unknown keys, missing seed, ...).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

// A numerical routine could not meet its contract (degenerate gradient,
// missing bracket, sampler failure, non-convergence that blocks output).
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& m) : std::runtime_error(m) {}
};

// An internal consistency check failed.
struct CheckError : std::runtime_error {
  explicit CheckError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace kinetrace
