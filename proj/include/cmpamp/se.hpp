#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <Eigen/Eigenvalues>

#include "cmpamp/denoise.hpp"
#include "cmpamp/error.hpp"
#include "cmpamp/model.hpp"
#include "cmpamp/rng.hpp"
#include "cmpamp/schedule.hpp"

namespace cmpamp::se {

enum class ExpectationMethod { adaptive, gauss_hermite, monte_carlo };

inline std::string_view to_string(ExpectationMethod m) {
  switch (m) {
    case ExpectationMethod::adaptive: return "adaptive";
    case ExpectationMethod::gauss_hermite: return "gauss_hermite";
    case ExpectationMethod::monte_carlo: return "monte_carlo";
  }
  return "?";
}

inline ExpectationMethod expectation_method_from_string(std::string_view name) {
  if (name == "adaptive") return ExpectationMethod::adaptive;
  if (name == "gauss_hermite") return ExpectationMethod::gauss_hermite;
  if (name == "monte_carlo") return ExpectationMethod::monte_carlo;
  throw std::invalid_argument("unknown expectation method: " + std::string(name));
}

/// How Gaussian expectations E[g(X, Z)] are evaluated.
///  adaptive:      Gauss-Kronrod (31 pt) on [-10, 10] in the standard-normal
///                 variable, split at the denoiser's kinks, per prior component.
///  gauss_hermite: fixed `nodes`-point rule per prior component.
///  monte_carlo:   `mc_samples` joint draws of (X, Z).
struct ExpectationEngine {
  ExpectationMethod method = ExpectationMethod::adaptive;
  std::size_t nodes = 61;
  std::size_t mc_samples = 1000000;
  std::uint64_t seed = 0;
  double tolerance = 1e-12;
};

namespace detail {

inline constexpr double kZSpan = 10.0;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

struct HermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;  // sum to 1 (probabilists' normalization)
};

// Golub-Welsch for the weight exp(-z^2/2)/sqrt(2 pi).
inline HermiteRule make_hermite_rule(std::size_t count) {
  const auto m = static_cast<Eigen::Index>(count);
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 1; i < m; ++i) {
    jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(static_cast<double>(i));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  HermiteRule rule;
  for (Eigen::Index i = 0; i < m; ++i) {
    rule.nodes.push_back(eig.eigenvalues()[i]);
    const double v = eig.eigenvectors()(0, i);
    rule.weights.push_back(v * v);
  }
  return rule;
}

inline const HermiteRule& hermite_rule(std::size_t count) {
  thread_local std::map<std::size_t, HermiteRule> cache;
  auto it = cache.find(count);
  if (it == cache.end()) it = cache.emplace(count, make_hermite_rule(count)).first;
  return it->second;
}

// E[g(Z)] for Z ~ N(0,1); `breaks` are interior points where g is not smooth.
inline double gaussian_expectation(const std::function<double(double)>& g, std::vector<double> breaks,
                                   const ExpectationEngine& engine) {
  if (engine.method == ExpectationMethod::gauss_hermite) {
    const auto& rule = hermite_rule(engine.nodes);
    double sum = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) sum += rule.weights[i] * g(rule.nodes[i]);
    return sum;
  }
  breaks.push_back(-kZSpan);
  breaks.push_back(kZSpan);
  std::erase_if(breaks, [](double z) { return !(z >= -kZSpan && z <= kZSpan); });
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
  auto integrand = [&](double z) { return g(z) * normal_pdf(z); };
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    if (breaks[i + 1] - breaks[i] <= 0.0) continue;
    total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        integrand, breaks[i], breaks[i + 1], 25, engine.tolerance);
  }
  return total;
}

// Kinks of eta in u mapped into z for u = shift + scale * z.
inline std::vector<double> breaks_for(const Denoiser& eta, double tau, double shift, double scale) {
  std::vector<double> out;
  for (double u : eta.features(tau)) {
    out.push_back((u - shift) / scale);
    out.push_back((-u - shift) / scale);
  }
  return out;
}

struct PriorComponent {
  double weight;
  double mean;      // point mass location, or 0 for the Gaussian part
  bool gaussian;    // X ~ N(0, v) instead of a point mass
};

inline std::vector<PriorComponent> components(const PriorSpec& prior) {
  std::vector<PriorComponent> out;
  if (prior.epsilon < 1.0) out.push_back({1.0 - prior.epsilon, 0.0, false});
  if (prior.epsilon > 0.0) {
    if (prior.kind == PriorKind::bernoulli_gaussian) {
      out.push_back({prior.epsilon, 0.0, true});
    } else {
      const double a = std::sqrt(prior.nonzero_variance);
      out.push_back({0.5 * prior.epsilon, a, false});
      out.push_back({0.5 * prior.epsilon, -a, false});
    }
  }
  return out;
}

template <class Sample>
double monte_carlo(const PriorSpec& prior, double tau, const ExpectationEngine& engine, Sample&& f,
                   double* std_error = nullptr) {
  CounterRng rng(engine.seed, Stream::monte_carlo);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal;
  const double amp = std::sqrt(prior.nonzero_variance);
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < engine.mc_samples; ++i) {
    const double b = uniform(rng);
    const double g = normal(rng);
    const double z = normal(rng);
    double x = 0.0;
    if (b < prior.epsilon) x = prior.kind == PriorKind::bernoulli_gaussian ? amp * g : (g < 0 ? -amp : amp);
    const double v = f(x + tau * z, x);
    const double delta = v - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (v - mean);
  }
  if (std_error && engine.mc_samples > 1)
    *std_error = std::sqrt(m2 / static_cast<double>(engine.mc_samples - 1) /
                           static_cast<double>(engine.mc_samples));
  return mean;
}

}  // namespace detail

/// E[(eta(X + tau Z) - X)^2] with X ~ prior and Z ~ N(0, 1) independent.
inline double mse_expectation(double tau, const Denoiser& eta, const PriorSpec& prior,
                              const ExpectationEngine& engine = {}) {
  if (!(tau > 0.0)) throw std::invalid_argument("mse_expectation needs tau > 0");
  prior.validate();
  if (engine.method == ExpectationMethod::monte_carlo) {
    return detail::monte_carlo(prior, tau, engine, [&](double u, double x) {
      const double e = eta(u, tau) - x;
      return e * e;
    });
  }
  if (eta.kind == DenoiserKind::zero) return prior.second_moment();
  double total = 0.0;
  for (const auto& c : detail::components(prior)) {
    double part;
    if (c.gaussian) {
      // U = X + tau Z ~ N(0, v + tau^2); X | U ~ N(shrink U, shrink tau^2).
      const double v = prior.nonzero_variance;
      const double scale = std::sqrt(v + tau * tau);
      const double shrink = v / (v + tau * tau);
      const double cond_var = shrink * tau * tau;
      part = detail::gaussian_expectation(
          [&](double z) {
            const double u = scale * z;
            const double e = eta(u, tau) - shrink * u;
            return e * e + cond_var;
          },
          detail::breaks_for(eta, tau, 0.0, scale), engine);
    } else {
      part = detail::gaussian_expectation(
          [&](double z) {
            const double e = eta(c.mean + tau * z, tau) - c.mean;
            return e * e;
          },
          detail::breaks_for(eta, tau, c.mean, tau), engine);
    }
    total += c.weight * part;
  }
  return total;
}

/// E[phi(eta(X + tau Z), X)] for an arbitrary loss. Nested quadrature over
/// (X, Z) for the Gaussian prior part, so slower than mse_expectation.
inline double loss_expectation(double tau, const Denoiser& eta, const PriorSpec& prior,
                               const std::function<double(double, double)>& phi,
                               const ExpectationEngine& engine = {}) {
  if (!(tau > 0.0)) throw std::invalid_argument("loss_expectation needs tau > 0");
  prior.validate();
  if (engine.method == ExpectationMethod::monte_carlo)
    return detail::monte_carlo(prior, tau, engine, [&](double u, double x) { return phi(eta(u, tau), x); });
  ExpectationEngine inner = engine;
  inner.tolerance = std::max(engine.tolerance, 1e-10);
  double total = 0.0;
  for (const auto& c : detail::components(prior)) {
    const auto point = [&](double x) {
      return detail::gaussian_expectation([&](double z) { return phi(eta(x + tau * z, tau), x); },
                                          detail::breaks_for(eta, tau, x, tau), inner);
    };
    double part;
    if (c.gaussian) {
      const double sd = std::sqrt(prior.nonzero_variance);
      ExpectationEngine outer = inner;
      outer.tolerance = std::max(engine.tolerance, 1e-9);
      part = detail::gaussian_expectation([&](double xi) { return point(sd * xi); }, {}, outer);
    } else {
      part = point(c.mean);
    }
    total += c.weight * part;
  }
  return total;
}

/// Monte-Carlo estimate with its standard error.
struct McEstimate {
  double mean;
  double std_error;
};

inline McEstimate mse_expectation_mc(double tau, const Denoiser& eta, const PriorSpec& prior,
                                     std::size_t samples, std::uint64_t seed) {
  ExpectationEngine engine{ExpectationMethod::monte_carlo, 0, samples, seed};
  McEstimate out{};
  out.mean = detail::monte_carlo(
      prior, tau, engine,
      [&](double u, double x) {
        const double e = eta(u, tau) - x;
        return e * e;
      },
      &out.std_error);
  return out;
}

enum class SeMode { amp, cmp };

inline std::string_view to_string(SeMode mode) { return mode == SeMode::amp ? "amp" : "cmp"; }

inline SeMode se_mode_from_string(std::string_view name) {
  if (name == "amp") return SeMode::amp;
  if (name == "cmp") return SeMode::cmp;
  throw std::invalid_argument("unknown SE mode: " + std::string(name));
}

/// Inputs shared by both recursions. `sizes` are the column blocks N_p; the
/// centralized recursion uses their sum N.
struct SeParams {
  std::size_t n = 0;
  std::vector<std::size_t> sizes;
  double sigma_w_sq = 0.0;
  PriorSpec prior;
  DenoiserSchedule denoiser = Denoiser::soft();
  ExpectationEngine engine;

  std::size_t columns() const { return std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}); }
  double delta() const { return static_cast<double>(n) / static_cast<double>(columns()); }
  double delta_p(std::size_t p) const { return static_cast<double>(n) / static_cast<double>(sizes[p]); }

  void validate() const {
    if (n == 0 || sizes.empty()) throw std::invalid_argument("SE needs n >= 1 and at least one block");
    for (auto s : sizes)
      if (s == 0) throw std::invalid_argument("SE block sizes must be positive");
    if (!(sigma_w_sq >= 0.0)) throw std::invalid_argument("noise variance must be non-negative");
    prior.validate();
    denoiser.validate();
    double inv_sum = 0.0;
    for (std::size_t p = 0; p < sizes.size(); ++p) inv_sum += 1.0 / delta_p(p);
    if (std::abs(inv_sum - 1.0 / delta()) > 1e-12 * (1.0 / delta()))
      throw std::logic_error("sum of per-block inverse sampling ratios does not match N/n");
  }
};

/// One SE record. Centralized: s = t, k = 0, p = 0. Column-wise: (s, k, p)
/// with (sigma_p^{s,k})^2, (tau_p^{s,k})^2 and (sigma_p^{s,k+1})^2.
struct SeEntry {
  std::size_t s = 0, k = 0, p = 0;
  double sigma_sq = 0.0;
  double tau_sq = 0.0;
  double next_sigma_sq = 0.0;

  bool operator==(const SeEntry&) const = default;
};

struct SeTrajectory {
  SeMode mode = SeMode::amp;
  std::vector<double> deltas;            // n/N for amp, n/N_p for cmp
  std::vector<double> initial_sigma_sq;  // per processor (one value for amp)
  std::vector<SeEntry> entries;

  /// Predicted per-coordinate MSE of the estimate produced by entry e.
  double predicted_mse(const SeEntry& e) const { return deltas[e.p] * e.next_sigma_sq; }

  const SeEntry* find(std::size_t s, std::size_t k, std::size_t p) const {
    auto it = std::find_if(entries.begin(), entries.end(),
                           [&](const SeEntry& e) { return e.s == s && e.k == k && e.p == p; });
    return it == entries.end() ? nullptr : &*it;
  }
};

struct AmpSeStep {
  double tau_sq;
  double next_sigma_sq;
};

/// tau^2 = sigma_w^2 + sigma^2; next sigma^2 = E[(eta(X + tau Z) - X)^2] / delta.
inline AmpSeStep amp_se_step(double sigma_sq, double sigma_w_sq, double delta, const Denoiser& eta,
                             const PriorSpec& prior, const ExpectationEngine& engine = {}) {
  if (!(sigma_sq >= 0.0)) throw std::invalid_argument("sigma^2 must be non-negative");
  const double tau_sq = sigma_w_sq + sigma_sq;
  return {tau_sq, mse_expectation(std::max(std::sqrt(tau_sq), kMinTau), eta, prior, engine) / delta};
}

/// Column-wise SE state inside a round: round-start values (frozen
/// cross-processor term) and the in-round values of each processor.
struct CmpSeState {
  std::vector<double> round_start;
  std::vector<double> current;

  static CmpSeState start_round(std::vector<double> sigmas) {
    return CmpSeState{sigmas, std::move(sigmas)};
  }
};

struct CmpSeStep {
  std::vector<double> tau_sq;
  std::vector<double> next_sigma_sq;
};

/// (tau_p)^2 = sigma_w^2 + sum_{u != p} sigma_u^{s,0} + sigma_p^{s,k}, evaluated
/// as sigma_w^2 + sum_u sigma_u^{s,0} + (sigma_p^{s,k} - sigma_p^{s,0}) so the
/// k = 0 value is the same number for every processor.
inline CmpSeStep cmp_se_step(const CmpSeState& state, double sigma_w_sq, std::span<const double> deltas,
                             const Denoiser& eta, const PriorSpec& prior,
                             const ExpectationEngine& engine = {}) {
  const std::size_t P = state.current.size();
  if (state.round_start.size() != P || deltas.size() != P)
    throw std::invalid_argument("cmp_se_step: inconsistent processor counts");
  double total = 0.0;
  for (double v : state.round_start) total += v;
  CmpSeStep out{std::vector<double>(P), std::vector<double>(P)};
  for (std::size_t p = 0; p < P; ++p) {
    const double own = state.current[p] - state.round_start[p];
    out.tau_sq[p] = sigma_w_sq + total + own;
    out.next_sigma_sq[p] =
        mse_expectation(std::max(std::sqrt(out.tau_sq[p]), kMinTau), eta, prior, engine) / deltas[p];
  }
  return out;
}

inline SeTrajectory run_se_amp(const SeParams& params, std::size_t iterations) {
  params.validate();
  SeTrajectory traj;
  traj.mode = SeMode::amp;
  traj.deltas = {params.delta()};
  double sigma_sq = params.prior.second_moment() / params.delta();
  traj.initial_sigma_sq = {sigma_sq};
  for (std::size_t t = 0; t < iterations; ++t) {
    auto step = amp_se_step(sigma_sq, params.sigma_w_sq, params.delta(), params.denoiser.at(t),
                            params.prior, params.engine);
    traj.entries.push_back({t, 0, 0, sigma_sq, step.tau_sq, step.next_sigma_sq});
    sigma_sq = step.next_sigma_sq;
  }
  return traj;
}

inline SeTrajectory run_se_cmp(const SeParams& params, const Schedule& schedule) {
  params.validate();
  schedule.validate(true);
  const std::size_t P = params.sizes.size();
  SeTrajectory traj;
  traj.mode = SeMode::cmp;
  for (std::size_t p = 0; p < P; ++p) traj.deltas.push_back(params.delta_p(p));
  std::vector<double> sigmas(P);
  for (std::size_t p = 0; p < P; ++p) sigmas[p] = params.prior.second_moment() / traj.deltas[p];
  traj.initial_sigma_sq = sigmas;
  std::size_t t = 0;
  for (std::size_t s = 1; s <= schedule.s_hat(); ++s) {
    auto state = CmpSeState::start_round(sigmas);
    for (std::size_t k = 0; k < schedule.inner(s); ++k, ++t) {
      auto step = cmp_se_step(state, params.sigma_w_sq, traj.deltas, params.denoiser.at(t),
                              params.prior, params.engine);
      for (std::size_t p = 0; p < P; ++p)
        traj.entries.push_back({s, k, p, state.current[p], step.tau_sq[p], step.next_sigma_sq[p]});
      state.current = step.next_sigma_sq;
    }
    sigmas = state.current;
  }
  return traj;
}

/// Centralized mode runs as many iterations as the schedule has inner steps.
inline SeTrajectory run_se(SeMode mode, const Schedule& schedule, const SeParams& params) {
  return mode == SeMode::amp ? run_se_amp(params, schedule.total_steps()) : run_se_cmp(params, schedule);
}

struct FixedPointResult {
  double tau_sq = 0.0;
  std::size_t sweeps = 0;
  double residual = 0.0;           // |tau^2 - sigma_w^2 - E(tau)/delta|
  double processor_spread = 0.0;   // max - min of tau_p^2 over the last round (cmp)
};

namespace detail {

// Stops when the step and the geometric-tail estimate of the remaining
// distance are both below tol.
class FixedPointMonitor {
 public:
  explicit FixedPointMonitor(double tol) : tol_(tol) {}

  bool settled(double step) {
    const double mag = std::abs(step);
    bool done = mag < tol_;
    if (done && prev_ > 0.0 && mag > 0.0) {
      const double rate = mag / prev_;
      done = rate < 1.0 && mag * rate / (1.0 - rate) < tol_;
    }
    prev_ = mag;
    return done;
  }

 private:
  double tol_;
  double prev_ = 0.0;
};

}  // namespace detail

/// Iterates the SE map from its initialization (the worst fixed point side)
/// until tau^2 stops moving. cmp mode sweeps whole rounds of k_hat inner steps.
inline FixedPointResult fixed_point(SeMode mode, const SeParams& params, std::size_t k_hat, double tol,
                                    std::size_t max_sweeps = 100000) {
  if (!(tol > 0.0)) throw std::invalid_argument("fixed point tolerance must be positive");
  params.validate();
  const Denoiser& eta = params.denoiser.stages().back();
  detail::FixedPointMonitor monitor(tol);
  FixedPointResult out;
  if (mode == SeMode::amp) {
    const double delta = params.delta();
    double tau_sq = params.sigma_w_sq + params.prior.second_moment() / delta;
    for (std::size_t sweep = 1; sweep <= max_sweeps; ++sweep) {
      const double next =
          params.sigma_w_sq + mse_expectation(std::sqrt(tau_sq), eta, params.prior, params.engine) / delta;
      const double step = next - tau_sq;
      tau_sq = next;
      if (monitor.settled(step)) {
        out.tau_sq = tau_sq;
        out.sweeps = sweep;
        out.residual = std::abs(
            tau_sq - params.sigma_w_sq -
            mse_expectation(std::sqrt(tau_sq), eta, params.prior, params.engine) / delta);
        return out;
      }
    }
    throw ConvergenceError("AMP state evolution did not reach a fixed point", max_sweeps);
  }

  if (k_hat == 0) throw std::invalid_argument("fixed point sweep needs k_hat >= 1");
  const std::size_t P = params.sizes.size();
  std::vector<double> deltas(P);
  for (std::size_t p = 0; p < P; ++p) deltas[p] = params.delta_p(p);
  std::vector<double> sigmas(P);
  for (std::size_t p = 0; p < P; ++p) sigmas[p] = params.prior.second_moment() / deltas[p];
  auto round_tau = [&](const std::vector<double>& s) {
    return params.sigma_w_sq + std::accumulate(s.begin(), s.end(), 0.0);
  };
  double tau_sq = round_tau(sigmas);
  for (std::size_t sweep = 1; sweep <= max_sweeps; ++sweep) {
    auto state = CmpSeState::start_round(sigmas);
    double lo = tau_sq, hi = tau_sq;
    for (std::size_t k = 0; k < k_hat; ++k) {
      auto step = cmp_se_step(state, params.sigma_w_sq, deltas, eta, params.prior, params.engine);
      for (double v : step.tau_sq) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      state.current = step.next_sigma_sq;
    }
    sigmas = state.current;
    const double next = round_tau(sigmas);
    const double step = next - tau_sq;
    tau_sq = next;
    if (monitor.settled(step)) {
      out.tau_sq = tau_sq;
      out.sweeps = sweep;
      out.processor_spread = hi - lo;
      // The fixed-point equation shared with the centralized recursion.
      out.residual = std::abs(
          tau_sq - params.sigma_w_sq -
          mse_expectation(std::sqrt(tau_sq), eta, params.prior, params.engine) / params.delta());
      return out;
    }
  }
  throw ConvergenceError("column-wise state evolution did not reach a fixed point", max_sweeps);
}

}  // namespace cmpamp::se
