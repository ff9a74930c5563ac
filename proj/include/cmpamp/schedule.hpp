#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace cmpamp {

/// Fusion schedule: outer round s (1-based) runs k_hats[s-1] inner iterations.
struct Schedule {
  std::vector<std::size_t> k_hats;

  static Schedule constant(std::size_t s_hat, std::size_t k_hat) {
    return Schedule{std::vector<std::size_t>(s_hat, k_hat)};
  }

  std::size_t s_hat() const noexcept { return k_hats.size(); }
  std::size_t inner(std::size_t s) const { return k_hats.at(s - 1); }
  std::size_t total_steps() const noexcept {
    return std::accumulate(k_hats.begin(), k_hats.end(), std::size_t{0});
  }

  bool is_constant() const noexcept {
    for (std::size_t k : k_hats)
      if (k != k_hats.front()) return false;
    return true;
  }

  /// Algorithm runs need s_hat >= 1; state evolution also accepts an empty
  /// schedule (initialization only).
  void validate(bool allow_empty = false) const {
    if (k_hats.empty() && !allow_empty) throw std::invalid_argument("schedule needs s_hat >= 1");
    for (std::size_t k : k_hats)
      if (k == 0) throw std::invalid_argument("every inner count k_hat_s must be >= 1");
  }

  bool operator==(const Schedule&) const = default;
};

}  // namespace cmpamp
