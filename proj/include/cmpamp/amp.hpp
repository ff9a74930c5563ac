#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmpamp/denoise.hpp"
#include "cmpamp/divergence.hpp"
#include "cmpamp/losses.hpp"
#include "cmpamp/model.hpp"
#include "cmpamp/se.hpp"

namespace cmpamp {

/// Where the effective noise level handed to thresholds/denoisers comes from.
enum class TauMode { estimated, state_evolution };

inline std::string_view to_string(TauMode mode) {
  return mode == TauMode::estimated ? "estimated" : "state_evolution";
}

inline TauMode tau_mode_from_string(std::string_view name) {
  if (name == "estimated") return TauMode::estimated;
  if (name == "state_evolution" || name == "se") return TauMode::state_evolution;
  throw std::invalid_argument("unknown tau mode: " + std::string(name));
}

/// sqrt(||z||^2 / n)
inline double estimate_tau(const VectorRef& z) {
  if (z.size() == 0) throw std::invalid_argument("estimate_tau needs n >= 1");
  return std::sqrt(z.squaredNorm() / static_cast<double>(z.size()));
}

/// Iterate t holds x^t and the previous residual z^{t-1} together with its
/// Onsager coefficient (1/n) sum eta'_{t-1}. Negative-index vectors are zero.
struct AmpState {
  std::size_t t = 0;
  Vector x;
  Vector z;
  double tau_hat = 0.0;
  double onsager = 0.0;

  static AmpState initial(std::size_t n, std::size_t N) {
    return {0, Vector::Zero(static_cast<Eigen::Index>(N)), Vector::Zero(static_cast<Eigen::Index>(n)), 0.0,
            0.0};
  }

  bool finite() const { return x.allFinite() && z.allFinite() && std::isfinite(tau_hat); }
};

///   z^t     = y - (A x^t - onsager_{t-1} z^{t-1})
///   x^{t+1} = eta_t(x^t + A^T z^t)
/// `tau` overrides the residual-based noise estimate (SE-driven mode).
inline AmpState amp_step(const AmpState& state, const MatrixRef& A, const VectorRef& y, const Denoiser& eta,
                         std::optional<double> tau = std::nullopt) {
  if (state.x.size() != A.cols() || state.z.size() != A.rows() || y.size() != A.rows())
    throw std::invalid_argument("amp_step: state dimensions do not match the matrix");
  const double inv_n = 1.0 / static_cast<double>(A.rows());
  AmpState next;
  next.t = state.t + 1;
  next.z = y - (A * state.x - state.z * state.onsager);
  next.tau_hat = estimate_tau(next.z);
  const double tau_used = std::max(tau.value_or(next.tau_hat), kMinTau);
  const Vector pseudo = state.x + A.transpose() * next.z;
  auto denoised = apply_denoiser(pseudo, eta, tau_used);
  next.x = std::move(denoised.values);
  next.onsager = denoised.derivative_sum * inv_n;
  return next;
}

struct AmpOptions {
  std::size_t max_iter = 50;
  double stop_tol = 1e-8;
  TauMode tau_mode = TauMode::estimated;
  std::vector<Pl2Loss> losses;
  se::ExpectationEngine engine;
};

/// Record t describes x^{t+1} and the residual z^t that produced it.
struct AmpRecord {
  std::size_t t = 0;
  double mse = 0.0;
  double tau_hat = 0.0;
  double tau_se = 0.0;
  std::vector<double> losses;

  bool operator==(const AmpRecord&) const = default;
};

struct AmpResult {
  std::vector<AmpRecord> records;
  AmpState state;
  std::optional<Divergence> divergence;
  std::vector<std::string> loss_names;
  se::SeTrajectory se;
};

inline se::SeParams se_params_for(const ProblemInstance& inst, const DenoiserSchedule& denoiser,
                                  const se::ExpectationEngine& engine) {
  se::SeParams params;
  params.n = inst.rows();
  params.sizes = inst.partition.sizes;
  params.sigma_w_sq = inst.sigma_w_sq;
  params.prior = inst.prior;
  params.denoiser = denoiser;
  params.engine = engine;
  return params;
}

/// Centralized AMP from x^0 = 0. Stops when the relative MSE change drops
/// below stop_tol or after max_iter iterations; a divergent run keeps the
/// last finite state.
inline AmpResult run_amp(const ProblemInstance& inst, const DenoiserSchedule& denoiser,
                         const AmpOptions& options = {}) {
  if (options.max_iter == 0) throw std::invalid_argument("run_amp needs max_iter >= 1");
  denoiser.validate();
  AmpResult result;
  for (const auto& loss : options.losses) result.loss_names.push_back(loss.name);
  result.se = se::run_se_amp(se_params_for(inst, denoiser, options.engine), options.max_iter);
  result.state = AmpState::initial(inst.rows(), inst.cols());
  double initial_tau = 0.0;
  for (std::size_t t = 0; t < options.max_iter; ++t) {
    const double tau_se = std::sqrt(result.se.entries[t].tau_sq);
    std::optional<double> tau;
    if (options.tau_mode == TauMode::state_evolution) tau = tau_se;
    AmpState next = amp_step(result.state, inst.A, inst.y, denoiser.at(t), tau);
    if (t == 0) initial_tau = next.tau_hat;
    if (!next.finite()) {
      result.divergence = Divergence{t, 0, 0, "non-finite iterate"};
      break;
    }
    if (initial_tau > 0.0 && next.tau_hat > kDivergenceGrowth * initial_tau) {
      result.divergence = Divergence{t, 0, 0, "tau_hat grew beyond divergence bound"};
      break;
    }
    result.state = std::move(next);
    AmpRecord rec;
    rec.t = t;
    rec.mse = mean_squared_error(result.state.x, inst.x);
    rec.tau_hat = result.state.tau_hat;
    rec.tau_se = tau_se;
    for (const auto& loss : options.losses) rec.losses.push_back(average_loss(loss, result.state.x, inst.x));
    result.records.push_back(std::move(rec));
    if (result.records.size() >= 2) {
      const double prev = result.records[result.records.size() - 2].mse;
      const double change = std::abs(result.records.back().mse - prev);
      if (change < options.stop_tol * std::max(prev, std::numeric_limits<double>::min())) break;
    }
  }
  return result;
}

}  // namespace cmpamp
