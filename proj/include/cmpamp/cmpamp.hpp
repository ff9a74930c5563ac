#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "cmpamp/amp.hpp"
#include "cmpamp/denoise.hpp"
#include "cmpamp/detail/format.hpp"
#include "cmpamp/divergence.hpp"
#include "cmpamp/losses.hpp"
#include "cmpamp/model.hpp"
#include "cmpamp/schedule.hpp"
#include "cmpamp/se.hpp"

namespace cmpamp {

enum class ExecutionMode { sequential, parallel, distributed };

inline std::string_view to_string(ExecutionMode mode) {
  switch (mode) {
    case ExecutionMode::sequential: return "sequential";
    case ExecutionMode::parallel: return "parallel";
    case ExecutionMode::distributed: return "distributed";
  }
  return "?";
}

inline ExecutionMode execution_mode_from_string(std::string_view name) {
  if (name == "sequential") return ExecutionMode::sequential;
  if (name == "parallel") return ExecutionMode::parallel;
  if (name == "distributed") return ExecutionMode::distributed;
  throw std::invalid_argument("unknown execution mode: " + std::string(name));
}

/// Convex blend rho * new + (1 - rho) * old of the x_p and/or r_p updates.
struct DampingConfig {
  double rho = 1.0;
  bool damp_x = true;
  bool damp_r = true;

  void validate() const {
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("damping rho must lie in (0, 1]");
  }
  bool active() const noexcept { return rho != 1.0; }
};

inline Vector apply_damping(const VectorRef& old, const VectorRef& fresh, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("damping rho must lie in (0, 1]");
  if (old.size() != fresh.size()) throw std::invalid_argument("apply_damping: length mismatch");
  if (rho == 1.0) return fresh;
  return rho * fresh + (1.0 - rho) * old;
}

/// g = sum_u r_u, accumulated in ascending processor order.
inline Vector fusion_aggregate(std::span<const Vector> contributions) {
  if (contributions.empty()) throw std::invalid_argument("fusion_aggregate needs at least one processor");
  Vector g = contributions.front();
  for (std::size_t u = 1; u < contributions.size(); ++u) {
    if (contributions[u].size() != g.size()) throw std::invalid_argument("fusion_aggregate: length mismatch");
    g += contributions[u];
  }
  return g;
}

/// Iterates held by processor p. After the inner step at global index t:
/// z = z_p^t, x = x_p^{t+1}, r = r_p^{t+1}; r_anchor = r_p^{s,0}.
struct ProcessorState {
  std::size_t p = 0;
  std::size_t t = 0;
  Vector x;
  Vector z;
  Vector r;
  Vector r_anchor;
  double tau_hat = 0.0;

  static ProcessorState initial(std::size_t p, std::size_t n, std::size_t block_size) {
    const auto nn = static_cast<Eigen::Index>(n);
    return {p, 0, Vector::Zero(static_cast<Eigen::Index>(block_size)), Vector::Zero(nn), Vector::Zero(nn),
            Vector::Zero(nn), 0.0};
  }

  bool finite() const {
    return x.allFinite() && z.allFinite() && r.allFinite() && std::isfinite(tau_hat);
  }
};

struct FusionState {
  std::size_t s = 0;
  Vector g;
};

/// One inner iteration on processor p:
///   z_p     = y - g_s - (r_p - r_p^{s,0})
///   x_p'    = eta(x_p + A_p^T z_p)
///   r_p'    = A_p x_p' - z_p (1/n) sum eta'
/// followed by the damping blend of x_p and/or r_p when rho < 1.
inline ProcessorState inner_step(const ProcessorState& proc, const VectorRef& y, const VectorRef& g,
                                 const MatrixRef& block, const Denoiser& eta, const DampingConfig& damping = {},
                                 std::optional<double> tau = std::nullopt) {
  if (y.size() != block.rows() || g.size() != y.size() || proc.x.size() != block.cols() ||
      proc.r.size() != y.size() || proc.r_anchor.size() != y.size())
    throw std::invalid_argument("inner_step: dimensions are inconsistent");
  const double inv_n = 1.0 / static_cast<double>(block.rows());
  ProcessorState next;
  next.p = proc.p;
  next.t = proc.t + 1;
  next.r_anchor = proc.r_anchor;
  next.z = y - g - (proc.r - proc.r_anchor);
  next.tau_hat = estimate_tau(next.z);
  const double tau_used = std::max(tau.value_or(next.tau_hat), kMinTau);
  const Vector pseudo = proc.x + block.transpose() * next.z;
  auto denoised = apply_denoiser(pseudo, eta, tau_used);
  Vector r_fresh = block * denoised.values - next.z * (denoised.derivative_sum * inv_n);
  if (damping.active()) {
    next.x = damping.damp_x ? apply_damping(proc.x, denoised.values, damping.rho) : std::move(denoised.values);
    next.r = damping.damp_r ? apply_damping(proc.r, r_fresh, damping.rho) : std::move(r_fresh);
  } else {
    next.x = std::move(denoised.values);
    next.r = std::move(r_fresh);
  }
  return next;
}

/// Per-step callback: (s, k, state after the step).
using StepHook = std::function<void(std::size_t, std::size_t, const ProcessorState&)>;
/// Optional tau override for (s, k, p), used by the SE-driven mode.
using TauSource = std::function<std::optional<double>(std::size_t, std::size_t, std::size_t)>;

/// Runs outer round s on one processor: snapshot r_p^{s,0}, then k_hat inner
/// steps against the aggregate g_s. Returns false and stops at the first step
/// whose iterates are unusable (state keeps the last good iterate).
inline bool processor_round(ProcessorState& proc, std::size_t s, std::size_t k_hat, const VectorRef& y,
                            const VectorRef& g, const MatrixRef& block, const DenoiserSchedule& denoiser,
                            const DampingConfig& damping, const TauSource& tau_source, const StepHook& hook,
                            std::string* failure = nullptr) {
  proc.r_anchor = proc.r;
  for (std::size_t k = 0; k < k_hat; ++k) {
    std::optional<double> tau;
    if (tau_source) tau = tau_source(s, k, proc.p);
    ProcessorState next = inner_step(proc, y, g, block, denoiser.at(proc.t), damping, tau);
    if (!next.finite()) {
      if (failure) *failure = "non-finite iterate";
      return false;
    }
    if (hook) hook(s, k, next);
    proc = std::move(next);
  }
  return true;
}

/// Fusion step followed by round s on every processor (sequentially).
inline void outer_round(std::vector<ProcessorState>& procs, FusionState& fusion, const VectorRef& y,
                        std::size_t s, const ProblemInstance& inst, std::size_t k_hat,
                        const DenoiserSchedule& denoiser, const DampingConfig& damping = {}) {
  if (s == 0) throw std::invalid_argument("outer rounds are numbered from 1");
  std::vector<Vector> contributions;
  for (const auto& proc : procs) contributions.push_back(proc.r);
  fusion.g = fusion_aggregate(contributions);
  fusion.s = s;
  for (auto& proc : procs) {
    std::string failure;
    if (!processor_round(proc, s, k_hat, y, fusion.g, inst.block(proc.p), denoiser, damping, {}, {}, &failure))
      throw DivergenceError("processor " + std::to_string(proc.p + 1) + " diverged in round " +
                            std::to_string(s) + ": " + failure);
  }
}

struct CmpOptions {
  DampingConfig damping;
  TauMode tau_mode = TauMode::estimated;
  std::vector<Pl2Loss> losses;
  se::ExpectationEngine engine;
  ExecutionMode mode = ExecutionMode::sequential;
};

/// Record (s, k, p) describes x_p^{s,k+1} and the residual z_p^{s,k}.
struct CmpRecord {
  std::size_t s = 0;
  std::size_t k = 0;
  std::size_t p = 0;
  double mse = 0.0;
  double tau_hat = 0.0;
  double tau_se = 0.0;
  std::vector<double> losses;

  auto position() const noexcept { return std::tuple{s, k, p}; }
  bool operator==(const CmpRecord&) const = default;
};

/// SE index: entries are ordered (s, k, p).
inline std::size_t se_entry_index(const Schedule& schedule, std::size_t P, std::size_t s, std::size_t k,
                                  std::size_t p) {
  std::size_t before = 0;
  for (std::size_t u = 1; u < s; ++u) before += schedule.inner(u);
  return (before + k) * P + p;
}

/// Everything processor p needs to run its share of the algorithm: its
/// column block, y, its slice of the ground truth (for losses only), the
/// schedule and the SE trajectory for the tau_se column. The same node drives
/// the sequential, threaded and message-passing execution modes.
class ProcessorNode {
 public:
  ProcessorNode(std::size_t p, MatrixRef block, VectorRef y, VectorRef truth, Schedule schedule,
                DenoiserSchedule denoiser, const CmpOptions& options,
                std::shared_ptr<const se::SeTrajectory> se_traj)
      : block_(std::move(block)),
        y_(std::move(y)),
        truth_(std::move(truth)),
        schedule_(std::move(schedule)),
        denoiser_(std::move(denoiser)),
        options_(options),
        se_(std::move(se_traj)),
        state_(ProcessorState::initial(p, static_cast<std::size_t>(y_.size()),
                                       static_cast<std::size_t>(block_.cols()))) {}

  std::size_t id() const noexcept { return state_.p; }
  const ProcessorState& state() const noexcept { return state_; }
  const Vector& contribution() const noexcept { return state_.r; }
  const std::vector<CmpRecord>& records() const noexcept { return records_; }
  const std::optional<Divergence>& divergence() const noexcept { return divergence_; }
  void set_hook(StepHook hook) { hook_ = std::move(hook); }

  /// Round s against aggregate g. A diverged node stays frozen.
  void run_round(std::size_t s, const VectorRef& g) {
    if (divergence_) return;
    const std::size_t P = se_->deltas.size();
    TauSource tau_source;
    if (options_.tau_mode == TauMode::state_evolution) {
      tau_source = [&](std::size_t ss, std::size_t k, std::size_t p) -> std::optional<double> {
        return std::sqrt(se_->entries[se_entry_index(schedule_, P, ss, k, p)].tau_sq);
      };
    }
    // Steps after a growth-bound violation finish the round unrecorded; the
    // round stops at the first non-finite step.
    std::optional<Divergence> growth;
    std::size_t k_done = 0;
    StepHook record = [&](std::size_t ss, std::size_t k, const ProcessorState& st) {
      k_done = k + 1;
      if (growth) return;
      if (ss == 1 && k == 0) initial_tau_ = st.tau_hat;
      if (initial_tau_ > 0.0 && st.tau_hat > kDivergenceGrowth * initial_tau_) {
        growth = Divergence{ss, k, st.p, "tau_hat grew beyond divergence bound"};
        return;
      }
      CmpRecord rec;
      rec.s = ss;
      rec.k = k;
      rec.p = st.p;
      rec.mse = mean_squared_error(st.x, truth_);
      rec.tau_hat = st.tau_hat;
      rec.tau_se = std::sqrt(se_->entries[se_entry_index(schedule_, P, ss, k, st.p)].tau_sq);
      for (const auto& loss : options_.losses) rec.losses.push_back(average_loss(loss, st.x, truth_));
      records_.push_back(std::move(rec));
      if (hook_) hook_(ss, k, st);
    };
    std::string failure;
    const bool ok = processor_round(state_, s, schedule_.inner(s), y_, g, block_, denoiser_, options_.damping,
                                    tau_source, record, &failure);
    if (growth) {
      divergence_ = growth;
    } else if (!ok) {
      divergence_ = Divergence{s, k_done, state_.p, failure};
    }
  }

 private:
  MatrixRef block_;
  VectorRef y_;
  VectorRef truth_;
  Schedule schedule_;
  DenoiserSchedule denoiser_;
  CmpOptions options_;
  std::shared_ptr<const se::SeTrajectory> se_;
  ProcessorState state_;
  std::vector<CmpRecord> records_;
  std::optional<Divergence> divergence_;
  StepHook hook_;
  double initial_tau_ = 0.0;
};

struct CmpResult {
  std::vector<CmpRecord> records;
  std::vector<ProcessorState> processors;
  std::optional<Divergence> divergence;
  std::vector<std::string> loss_names;
  se::SeTrajectory se;
};

/// Sorts per-processor records by (s, k, p) and cuts them at the earliest
/// divergence, so every execution mode reports the same trajectory.
inline void merge_trajectories(CmpResult& result, std::span<const std::vector<CmpRecord>> records,
                               std::span<const std::optional<Divergence>> divergences) {
  for (const auto& d : divergences) {
    if (d && (!result.divergence || d->position() < result.divergence->position())) result.divergence = d;
  }
  for (const auto& recs : records) result.records.insert(result.records.end(), recs.begin(), recs.end());
  std::sort(result.records.begin(), result.records.end(),
            [](const CmpRecord& a, const CmpRecord& b) { return a.position() < b.position(); });
  if (result.divergence) {
    const auto cut = result.divergence->position();
    std::erase_if(result.records, [&](const CmpRecord& r) { return !(r.position() < cut); });
  }
}

inline void merge_records(CmpResult& result, std::span<const ProcessorNode> nodes) {
  std::vector<std::vector<CmpRecord>> records;
  std::vector<std::optional<Divergence>> divergences;
  for (const auto& node : nodes) {
    records.push_back(node.records());
    divergences.push_back(node.divergence());
  }
  merge_trajectories(result, records, divergences);
}

inline std::vector<ProcessorNode> make_nodes(const ProblemInstance& inst, const Schedule& schedule,
                                             const DenoiserSchedule& denoiser, const CmpOptions& options,
                                             const std::shared_ptr<const se::SeTrajectory>& se_traj) {
  std::vector<ProcessorNode> nodes;
  nodes.reserve(inst.processors());
  for (std::size_t p = 0; p < inst.processors(); ++p)
    nodes.emplace_back(p, inst.block(p), inst.y, inst.signal_block(p), schedule, denoiser, options, se_traj);
  return nodes;
}

inline void validate_cmp_inputs(const ProblemInstance& inst, const Schedule& schedule,
                                const DenoiserSchedule& denoiser, const CmpOptions& options) {
  schedule.validate();
  denoiser.validate();
  options.damping.validate();
  if (inst.processors() == 0) throw std::invalid_argument("instance has no partition");
}

/// Column-wise multiprocessor AMP. `parallel` runs each processor's inner
/// loop on its own thread with the fusion step as the barrier; the
/// `distributed` mode lives in runtime/distributed.hpp.
inline CmpResult run_cmp_amp(const ProblemInstance& inst, const Schedule& schedule,
                             const DenoiserSchedule& denoiser, const CmpOptions& options = {},
                             const StepHook& hook = {}) {
  validate_cmp_inputs(inst, schedule, denoiser, options);
  if (options.mode == ExecutionMode::distributed)
    throw std::invalid_argument("distributed mode runs through runtime::run_distributed");
  CmpResult result;
  for (const auto& loss : options.losses) result.loss_names.push_back(loss.name);
  auto se_traj = std::make_shared<const se::SeTrajectory>(
      se::run_se_cmp(se_params_for(inst, denoiser, options.engine), schedule));
  auto nodes = make_nodes(inst, schedule, denoiser, options, se_traj);
  if (hook)
    for (auto& node : nodes) node.set_hook(hook);
  std::vector<Vector> contributions(nodes.size());
  for (std::size_t s = 1; s <= schedule.s_hat(); ++s) {
    for (std::size_t p = 0; p < nodes.size(); ++p) contributions[p] = nodes[p].contribution();
    const Vector g = fusion_aggregate(contributions);
    if (options.mode == ExecutionMode::parallel && nodes.size() > 1) {
      std::vector<std::exception_ptr> errors(nodes.size());
      {
        std::vector<std::jthread> threads;
        for (std::size_t p = 0; p < nodes.size(); ++p) {
          threads.emplace_back([&, p] {
            try {
              nodes[p].run_round(s, g);
            } catch (...) {
              errors[p] = std::current_exception();
            }
          });
        }
      }
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    } else {
      for (auto& node : nodes) node.run_round(s, g);
    }
    if (std::any_of(nodes.begin(), nodes.end(), [](const auto& nd) { return nd.divergence().has_value(); }))
      break;
  }
  merge_records(result, nodes);
  for (const auto& node : nodes) result.processors.push_back(node.state());
  result.se = *se_traj;
  return result;
}

/// Trajectory CSV: s,k,p,mse_p,tau_hat_p,tau_se_p,<loss...>; p is 1-based.
inline void write_cmp_csv(std::ostream& out, std::span<const std::string> loss_names,
                          std::span<const CmpRecord> records) {
  out << "s,k,p,mse_p,tau_hat_p,tau_se_p";
  for (const auto& name : loss_names) out << ',' << name;
  out << '\n';
  for (const auto& r : records) {
    out << r.s << ',' << r.k << ',' << (r.p + 1) << ',' << detail::format_double(r.mse) << ','
        << detail::format_double(r.tau_hat) << ',' << detail::format_double(r.tau_se);
    for (double v : r.losses) out << ',' << detail::format_double(v);
    out << '\n';
  }
}

/// Trajectory CSV: t,mse,tau_hat,tau_se,<loss...>
inline void write_amp_csv(std::ostream& out, std::span<const std::string> loss_names,
                          std::span<const AmpRecord> records) {
  out << "t,mse,tau_hat,tau_se";
  for (const auto& name : loss_names) out << ',' << name;
  out << '\n';
  for (const auto& r : records) {
    out << r.t << ',' << detail::format_double(r.mse) << ',' << detail::format_double(r.tau_hat) << ','
        << detail::format_double(r.tau_se);
    for (double v : r.losses) out << ',' << detail::format_double(v);
    out << '\n';
  }
}

}  // namespace cmpamp
