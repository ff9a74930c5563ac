#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cmpamp/model.hpp"

namespace cmpamp {

/// Minimax-style soft-threshold multiplier: theta = alpha * tau.
inline constexpr double kDefaultAlpha = 1.1403;

/// Engines clamp the effective noise level to this before handing it to a
/// denoiser, so an exactly-zero residual does not trip the tau > 0 contract.
inline constexpr double kMinTau = 1e-100;

inline double soft_threshold(double u, double theta) {
  if (!(theta >= 0.0)) throw std::invalid_argument("soft threshold must be non-negative");
  const double mag = std::abs(u) - theta;
  return mag > 0.0 ? std::copysign(mag, u) : 0.0;
}

/// Weak derivative; the kink |u| == theta resolves to 0. theta == 0 is the
/// identity, which has no kink.
inline double soft_threshold_deriv(double u, double theta) {
  if (!(theta >= 0.0)) throw std::invalid_argument("soft threshold must be non-negative");
  return std::abs(u) > theta || theta == 0.0 ? 1.0 : 0.0;
}

namespace detail {

// Posterior pieces for X ~ (1-eps) delta_0 + eps N(0, v) observed as u = X + tau Z.
struct BgPosterior {
  double shrink;   // v / (v + tau^2)
  double kappa;    // 1/tau^2 - 1/(v + tau^2)
  double base;     // log(eps/(1-eps)) + 0.5 log(tau^2 / (v + tau^2))

  BgPosterior(double tau, const PriorSpec& prior) {
    if (!(tau > 0.0)) throw std::invalid_argument("bayes denoiser needs tau > 0");
    if (prior.kind != PriorKind::bernoulli_gaussian)
      throw std::invalid_argument("bayes_bg denoiser needs a bernoulli_gaussian prior");
    const double s0 = tau * tau;
    const double s1 = prior.nonzero_variance + s0;
    shrink = prior.nonzero_variance / s1;
    kappa = prior.nonzero_variance / (s0 * s1);
    base = std::log(prior.epsilon) - std::log1p(-prior.epsilon) + 0.5 * std::log(s0 / s1);
  }

  // P(X != 0 | u).
  double active(double u, double eps) const {
    if (eps <= 0.0) return 0.0;
    if (eps >= 1.0) return 1.0;
    const double logit = base + 0.5 * kappa * u * u;
    return 1.0 / (1.0 + std::exp(-logit));
  }

  // |u| at which the posterior log-odds equal `logit`, or a negative value.
  double crossing(double logit) const {
    const double usq = 2.0 * (logit - base) / kappa;
    return usq > 0.0 ? std::sqrt(usq) : -1.0;
  }
};

}  // namespace detail

/// Posterior mean E[X | X + tau Z = u] under a Bernoulli-Gaussian prior.
inline double bayes_bg(double u, double tau, const PriorSpec& prior) {
  detail::BgPosterior post(tau, prior);
  return post.active(u, prior.epsilon) * post.shrink * u;
}

inline double bayes_bg_deriv(double u, double tau, const PriorSpec& prior) {
  detail::BgPosterior post(tau, prior);
  const double pi = post.active(u, prior.epsilon);
  return post.shrink * (pi + pi * (1.0 - pi) * post.kappa * u * u);
}

enum class DenoiserKind { soft_threshold, bayes_bg, zero };

inline std::string_view to_string(DenoiserKind kind) {
  switch (kind) {
    case DenoiserKind::soft_threshold: return "soft_threshold";
    case DenoiserKind::bayes_bg: return "bayes_bg";
    case DenoiserKind::zero: return "zero";
  }
  return "?";
}

inline DenoiserKind denoiser_kind_from_string(std::string_view name) {
  if (name == "soft_threshold") return DenoiserKind::soft_threshold;
  if (name == "bayes_bg") return DenoiserKind::bayes_bg;
  if (name == "zero") return DenoiserKind::zero;
  throw std::invalid_argument("unknown denoiser kind: " + std::string(name));
}

/// Separable Lipschitz denoiser eta(u; tau). `zero` (eta == 0) exists for
/// closed-form checks of the SE engine.
struct Denoiser {
  DenoiserKind kind = DenoiserKind::soft_threshold;
  double alpha = kDefaultAlpha;
  PriorSpec prior;

  static Denoiser soft(double alpha = kDefaultAlpha) { return {DenoiserKind::soft_threshold, alpha, {}}; }
  static Denoiser identity() { return soft(0.0); }
  static Denoiser bayes(const PriorSpec& prior) { return {DenoiserKind::bayes_bg, 0.0, prior}; }
  static Denoiser zero() { return {DenoiserKind::zero, 0.0, {}}; }

  void validate() const {
    if (kind == DenoiserKind::soft_threshold && !(alpha >= 0.0))
      throw std::invalid_argument("threshold multiplier alpha must be non-negative");
    if (kind == DenoiserKind::bayes_bg) {
      prior.validate();
      if (prior.kind != PriorKind::bernoulli_gaussian)
        throw std::invalid_argument("bayes_bg denoiser needs a bernoulli_gaussian prior");
    }
  }

  double operator()(double u, double tau) const {
    switch (kind) {
      case DenoiserKind::soft_threshold: return soft_threshold(u, alpha * tau);
      case DenoiserKind::bayes_bg: return bayes_bg(u, tau, prior);
      case DenoiserKind::zero: return 0.0;
    }
    return 0.0;
  }

  double derivative(double u, double tau) const {
    switch (kind) {
      case DenoiserKind::soft_threshold: return soft_threshold_deriv(u, alpha * tau);
      case DenoiserKind::bayes_bg: return bayes_bg_deriv(u, tau, prior);
      case DenoiserKind::zero: return 0.0;
    }
    return 0.0;
  }

  /// Points (u > 0; the set is symmetric) where eta is not smooth or changes
  /// sharply. Quadrature splits its domain here.
  std::vector<double> features(double tau) const {
    std::vector<double> out;
    if (kind == DenoiserKind::soft_threshold) {
      if (alpha * tau > 0.0) out.push_back(alpha * tau);
    } else if (kind == DenoiserKind::bayes_bg && prior.epsilon > 0.0 && prior.epsilon < 1.0) {
      detail::BgPosterior post(tau, prior);
      for (double logit : {-6.0, 0.0, 6.0}) {
        const double u = post.crossing(logit);
        if (u > 0.0) out.push_back(u);
      }
    }
    return out;
  }

  bool operator==(const Denoiser&) const = default;
};

/// Largest slope of eta(.; tau). Exact for the piecewise-linear kinds; for the
/// Bayes denoiser the derivative is continuous, so a dense scan plus a small
/// margin bounds it.
inline double lipschitz_constant(const Denoiser& eta, double tau) {
  switch (eta.kind) {
    case DenoiserKind::soft_threshold: return 1.0;
    case DenoiserKind::zero: return 0.0;
    case DenoiserKind::bayes_bg: break;
  }
  const double span = 12.0 * std::sqrt(eta.prior.nonzero_variance + tau * tau);
  constexpr int kSteps = 200000;
  double best = 0.0;
  for (int i = 0; i <= kSteps; ++i) {
    const double u = span * static_cast<double>(i) / kSteps;
    best = std::max(best, eta.derivative(u, tau));
  }
  return best * (1.0 + 1e-3);
}

struct DenoiseResult {
  Vector values;
  double derivative_sum = 0.0;
  double mean_derivative = 0.0;
};

/// Coordinate-wise eta and the average of eta' over the coordinates.
inline DenoiseResult apply_denoiser(const VectorRef& values, const Denoiser& eta, double tau) {
  if (values.size() == 0) throw std::invalid_argument("apply_denoiser needs a non-empty input");
  DenoiseResult out;
  out.values.resize(values.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    out.values[i] = eta(values[i], tau);
    sum += eta.derivative(values[i], tau);
  }
  out.derivative_sum = sum;
  out.mean_derivative = sum / static_cast<double>(values.size());
  return out;
}

/// Per-iteration denoisers eta_0, eta_1, ...; the last stage repeats.
class DenoiserSchedule {
 public:
  DenoiserSchedule(Denoiser eta) : stages_{eta} {}  // NOLINT: implicit stationary schedule
  explicit DenoiserSchedule(std::vector<Denoiser> stages) : stages_(std::move(stages)) {
    if (stages_.empty()) throw std::invalid_argument("denoiser schedule is empty");
  }

  const Denoiser& at(std::size_t iteration) const {
    return stages_[std::min(iteration, stages_.size() - 1)];
  }
  const std::vector<Denoiser>& stages() const noexcept { return stages_; }

  void validate() const {
    for (const auto& d : stages_) d.validate();
  }

 private:
  std::vector<Denoiser> stages_;
};

}  // namespace cmpamp
