#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cmpamp {

/// Malformed or inconsistent run configuration (CLI exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative engine produced non-finite or runaway iterates (CLI exit code 2).
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed-point iteration did not settle within its sweep budget.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::size_t sweeps)
      : std::runtime_error(what), sweeps_(sweeps) {}
  std::size_t sweeps() const noexcept { return sweeps_; }

 private:
  std::size_t sweeps_;
};

}  // namespace cmpamp
