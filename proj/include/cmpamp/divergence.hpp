#pragma once

#include <compare>
#include <cstddef>
#include <string>
#include <tuple>

namespace cmpamp {

/// Where an engine first produced unusable iterates. Centralized AMP reports
/// s = t, k = 0, p = 0.
struct Divergence {
  std::size_t s = 0;
  std::size_t k = 0;
  std::size_t p = 0;
  std::string reason;

  auto position() const noexcept { return std::tuple{s, k, p}; }
  bool operator==(const Divergence&) const = default;
};

/// tau_hat beyond this multiple of its first value counts as divergence.
inline constexpr double kDivergenceGrowth = 1e6;

}  // namespace cmpamp
