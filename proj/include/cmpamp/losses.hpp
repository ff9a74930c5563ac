#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmpamp/model.hpp"
#include "cmpamp/rng.hpp"

namespace cmpamp {

/// A pseudo-Lipschitz (order 2) loss phi(estimate, truth) with its constant L:
/// |phi(a) - phi(b)| <= L (1 + |a| + |b|) |a - b| for a, b in R^2.
struct Pl2Loss {
  std::string name;
  std::function<double(double, double)> evaluate;
  double lipschitz = 1.0;
};

inline std::vector<std::string> builtin_loss_names() {
  return {"squared_error", "absolute_error", "estimate_power"};
}

inline Pl2Loss builtin_loss(const std::string& name) {
  if (name == "squared_error")
    return {name, [](double a, double b) { return (a - b) * (a - b); }, 2.0};
  if (name == "absolute_error")
    return {name, [](double a, double b) { return std::abs(a - b); }, std::sqrt(2.0)};
  if (name == "estimate_power")
    return {name, [](double a, double) { return a * a; }, 1.0};
  throw std::invalid_argument("unknown loss: " + name);
}

/// Largest observed ratio |phi(a)-phi(b)| / ((1+|a|+|b|)|a-b|) over random pairs.
inline double pl2_ratio_sample(const Pl2Loss& loss, std::size_t pairs, std::uint64_t seed) {
  CounterRng rng(seed, Stream::monte_carlo);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> log_scale(-3.0, 3.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < pairs; ++i) {
    const double scale = std::pow(10.0, log_scale(rng));
    const double a0 = scale * normal(rng), a1 = scale * normal(rng);
    const double b0 = scale * normal(rng), b1 = scale * normal(rng);
    const double dist = std::hypot(a0 - b0, a1 - b1);
    if (dist == 0.0) continue;
    const double bound = (1.0 + std::hypot(a0, a1) + std::hypot(b0, b1)) * dist;
    worst = std::max(worst, std::abs(loss.evaluate(a0, a1) - loss.evaluate(b0, b1)) / bound);
  }
  return worst;
}

/// Rejects a loss whose sampled PL(2) ratio exceeds its declared constant.
inline void check_pl2(const Pl2Loss& loss, std::size_t pairs = 10000, std::uint64_t seed = 17) {
  const double ratio = pl2_ratio_sample(loss, pairs, seed);
  if (ratio > loss.lipschitz * (1.0 + 1e-12))
    throw std::invalid_argument("loss " + loss.name + " fails the PL(2) spot check (ratio " +
                                std::to_string(ratio) + ")");
}

/// (1/m) sum_i phi(estimate_i, truth_i)
inline double average_loss(const Pl2Loss& loss, const VectorRef& estimate, const VectorRef& truth) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < estimate.size(); ++i) sum += loss.evaluate(estimate[i], truth[i]);
  return sum / static_cast<double>(estimate.size());
}

inline double mean_squared_error(const VectorRef& estimate, const VectorRef& truth) {
  return (estimate - truth).squaredNorm() / static_cast<double>(estimate.size());
}

}  // namespace cmpamp
