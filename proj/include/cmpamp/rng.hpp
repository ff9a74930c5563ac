#pragma once

#include <cstdint>
#include <limits>

namespace cmpamp {

/// Independent random sources. Every draw is keyed by (seed, stream, index),
/// so a worker can regenerate its own columns without seeing anyone else's.
enum class Stream : std::uint64_t {
  matrix = 1,
  signal = 2,
  noise = 3,
  processor = 4,
  trial = 5,
  monte_carlo = 6,
};

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator (SplitMix64 finalizer over a keyed counter).
/// Satisfies UniformRandomBitGenerator, so std distributions work on it.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  constexpr CounterRng(std::uint64_t seed, Stream stream, std::uint64_t index = 0) noexcept
      : key_(derive_key(seed, stream, index)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept { return mix64(key_ + (++counter_) * kGolden); }

  constexpr void discard(std::uint64_t count) noexcept { counter_ += count; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static constexpr std::uint64_t derive_key(std::uint64_t seed, Stream stream,
                                            std::uint64_t index) noexcept {
    std::uint64_t k = mix64(seed + kGolden);
    k = mix64(k ^ (static_cast<std::uint64_t>(stream) * 0xd1b54a32d192ed03ULL));
    return mix64(k + index * kGolden);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Seed for the i-th trial of an experiment; trials never share a stream.
constexpr std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t trial) noexcept {
  CounterRng rng(base_seed, Stream::trial, trial);
  return rng();
}

}  // namespace cmpamp
