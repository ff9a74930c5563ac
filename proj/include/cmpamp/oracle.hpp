#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmpamp/cmpamp.hpp"
#include "cmpamp/denoise.hpp"
#include "cmpamp/error.hpp"
#include "cmpamp/model.hpp"
#include "cmpamp/schedule.hpp"

// Reference implementation of the coupled (h, q, b, m) recursion that the
// column-wise algorithm is equivalent to. The recursion itself touches only the
// denoisers and the instance; the engine is called only to produce iterates
// for the comparison.

namespace cmpamp::oracle {

/// The family at global index t, plus h^{t+1} (the next step's input).
///   q_p^t   = f_t(h_p^t, x_p),  f_t(h, x) = eta_{t-1}(x - h) - x,  q_p^0 = -x_p
///   lambda  = (1/n) sum f_t'    (derivative in h, so -(1/n) sum eta')
///   b_p^t   = A_p q_p^t - lambda_p^t m_p^{t-1}
///   m_p^t   = b_p^t + sum_{u != p} b_u^{theta(t)} - w
///   h_p^t+1 = A_p^T m_p^t - q_p^t
struct GeneralRecursionState {
  std::size_t t = 0;
  std::size_t k_hat = 1;
  std::size_t theta = 0;  // floor(t / k_hat) * k_hat
  std::vector<Vector> h;  // h_p^{t+1}
  std::vector<Vector> q;
  std::vector<Vector> b;
  std::vector<Vector> m;
  std::vector<double> lambda;
  std::vector<Vector> b_anchor;  // b_u^{theta(t)}

  std::size_t processors() const noexcept { return q.size(); }
};

namespace detail {

inline double residual_tau(const Vector& m) {
  return std::sqrt(m.squaredNorm() / static_cast<double>(m.size()));
}

inline void close_step(GeneralRecursionState& st, const ProblemInstance& inst) {
  const std::size_t P = st.processors();
  Vector anchor_sum = Vector::Zero(inst.y.size());
  for (std::size_t u = 0; u < P; ++u) anchor_sum += st.b_anchor[u];
  st.m.resize(P);
  st.h.resize(P);
  for (std::size_t p = 0; p < P; ++p) {
    // b_p^t + sum_{u != p} b_u^theta - w
    st.m[p] = st.b[p] + (anchor_sum - st.b_anchor[p]) - inst.w;
    st.h[p] = inst.block(p).transpose() * st.m[p] - st.q[p];
  }
}

}  // namespace detail

inline GeneralRecursionState general_recursion_init(const ProblemInstance& inst, std::size_t k_hat) {
  if (k_hat == 0) throw std::invalid_argument("recursion needs k_hat >= 1");
  GeneralRecursionState st;
  st.k_hat = k_hat;
  const std::size_t P = inst.processors();
  for (std::size_t p = 0; p < P; ++p) {
    st.q.push_back(-inst.signal_block(p));
    st.lambda.push_back(0.0);
    st.b.push_back(inst.block(p) * st.q[p]);
  }
  // theta(0) = 0: the round-start b is the actual b^0, not zero.
  st.b_anchor = st.b;
  detail::close_step(st, inst);
  return st;
}

/// Advances t -> t+1. eta_t is denoiser.at(t) at tau = ||m_p^t|| / sqrt(n),
/// the noise estimate the algorithm forms from z_p^t = -m_p^t.
inline GeneralRecursionState general_recursion_step(const GeneralRecursionState& st, const ProblemInstance& inst,
                                                    const DenoiserSchedule& denoiser) {
  const std::size_t P = st.processors();
  if (P != inst.processors()) throw std::invalid_argument("recursion state does not match the instance");
  const double inv_n = 1.0 / static_cast<double>(inst.rows());
  const Denoiser& eta = denoiser.at(st.t);
  GeneralRecursionState next;
  next.t = st.t + 1;
  next.k_hat = st.k_hat;
  next.theta = (next.t / next.k_hat) * next.k_hat;
  for (std::size_t p = 0; p < P; ++p) {
    const Vector truth = inst.signal_block(p);
    const double tau = std::max(detail::residual_tau(st.m[p]), kMinTau);
    Vector q(truth.size());
    double deriv = 0.0;
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
      const double u = truth[i] - st.h[p][i];
      q[i] = eta(u, tau) - truth[i];
      deriv += eta.derivative(u, tau);
    }
    const double lambda = -deriv * inv_n;
    next.b.push_back(inst.block(p) * q - lambda * st.m[p]);
    next.q.push_back(std::move(q));
    next.lambda.push_back(lambda);
  }
  next.b_anchor = next.theta == next.t ? next.b : st.b_anchor;
  detail::close_step(next, inst);
  return next;
}

/// Per-processor iterates of the algorithm by global index:
/// x[p][t] = x_p^t (t = 0 .. T), z[p][t] = z_p^t and r[p][t] = r_p^t.
struct AlgorithmHistory {
  std::vector<std::vector<Vector>> x;
  std::vector<std::vector<Vector>> z;
  std::vector<std::vector<Vector>> r;

  std::size_t steps() const { return z.empty() ? 0 : z.front().size(); }
};

inline AlgorithmHistory record_history(const ProblemInstance& inst, std::size_t k_hat, std::size_t steps,
                                       const DenoiserSchedule& denoiser) {
  if (k_hat == 0 || steps == 0) throw std::invalid_argument("history needs k_hat >= 1 and steps >= 1");
  const std::size_t rounds = (steps + k_hat - 1) / k_hat;
  const std::size_t P = inst.processors();
  AlgorithmHistory hist;
  hist.x.assign(P, {});
  hist.z.assign(P, {});
  hist.r.assign(P, {});
  for (std::size_t p = 0; p < P; ++p) {
    hist.x[p].push_back(Vector::Zero(static_cast<Eigen::Index>(inst.partition.sizes[p])));
    hist.r[p].push_back(Vector::Zero(inst.y.size()));
  }
  auto hook = [&](std::size_t, std::size_t, const ProcessorState& st) {
    hist.z[st.p].push_back(st.z);
    hist.x[st.p].push_back(st.x);
    hist.r[st.p].push_back(st.r);
  };
  auto result = run_cmp_amp(inst, Schedule::constant(rounds, k_hat), denoiser, {}, hook);
  if (result.divergence)
    throw DivergenceError("algorithm diverged at round " + std::to_string(result.divergence->s));
  return hist;
}

/// Algorithm iterates at index t expressed as recursion quantities:
///   h^{t+1} = x_p - (A_p^T z^t + x^t), q^t = x^t - x_p, b^t = r^t - A_p x_p, m^t = -z^t.
/// lambda is not part of the mapping and is left at zero.
inline GeneralRecursionState map_from_algorithm(const AlgorithmHistory& hist, const ProblemInstance& inst,
                                                std::size_t t, std::size_t k_hat) {
  const std::size_t P = inst.processors();
  if (hist.x.size() != P || hist.z.size() != P || hist.r.size() != P)
    throw std::invalid_argument("history does not match the instance's processor count");
  for (std::size_t p = 0; p < P; ++p)
    if (hist.z[p].size() <= t || hist.x[p].size() <= t || hist.r[p].size() <= t)
      throw std::invalid_argument("missing iterate history at t = " + std::to_string(t));
  GeneralRecursionState st;
  st.t = t;
  st.k_hat = k_hat;
  st.theta = (t / k_hat) * k_hat;
  for (std::size_t p = 0; p < P; ++p) {
    const auto block = inst.block(p);
    const Vector truth = inst.signal_block(p);
    const Vector ax = block * truth;
    st.h.push_back(truth - (block.transpose() * hist.z[p][t] + hist.x[p][t]));
    st.q.push_back(hist.x[p][t] - truth);
    st.b.push_back(hist.r[p][t] - ax);
    st.m.push_back(-hist.z[p][t]);
    st.lambda.push_back(0.0);
    st.b_anchor.push_back(hist.r[p][st.theta] - ax);
  }
  return st;
}

/// Largest |recursion - mapped| per family over t <= t_max, p and coordinates.
struct EquivalenceReport {
  double h = 0.0;
  double q = 0.0;
  double b = 0.0;
  double m = 0.0;
  std::size_t steps = 0;

  double max() const { return std::max({h, q, b, m}); }
};

inline double max_abs_gap(const std::vector<Vector>& a, const std::vector<Vector>& b) {
  double worst = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    const double gap = (a[p] - b[p]).lpNorm<Eigen::Infinity>();
    if (!std::isfinite(gap)) return gap;
    worst = std::max(worst, gap);
  }
  return worst;
}

inline EquivalenceReport check_equivalence(const ProblemInstance& inst, const Schedule& schedule,
                                           const DenoiserSchedule& denoiser, std::size_t t_max) {
  schedule.validate();
  if (!schedule.is_constant()) throw std::invalid_argument("the recursion requires a constant k_hat schedule");
  const std::size_t k_hat = schedule.k_hats.front();
  const auto hist = record_history(inst, k_hat, t_max + 1, denoiser);
  EquivalenceReport report;
  auto rec = general_recursion_init(inst, k_hat);
  for (std::size_t t = 0;; ++t) {
    for (std::size_t p = 0; p < rec.processors(); ++p)
      if (!rec.h[p].allFinite() || !rec.m[p].allFinite() || !rec.q[p].allFinite())
        throw DivergenceError("recursion produced non-finite values at t = " + std::to_string(t));
    const auto mapped = map_from_algorithm(hist, inst, t, k_hat);
    report.h = std::max(report.h, max_abs_gap(rec.h, mapped.h));
    report.q = std::max(report.q, max_abs_gap(rec.q, mapped.q));
    report.b = std::max(report.b, max_abs_gap(rec.b, mapped.b));
    report.m = std::max(report.m, max_abs_gap(rec.m, mapped.m));
    report.steps = t + 1;
    if (t == t_max) break;
    rec = general_recursion_step(rec, inst, denoiser);
  }
  return report;
}

}  // namespace cmpamp::oracle
