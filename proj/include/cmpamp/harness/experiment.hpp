#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cmpamp/amp.hpp"
#include "cmpamp/cmpamp.hpp"
#include "cmpamp/container.hpp"
#include "cmpamp/error.hpp"
#include "cmpamp/harness/config.hpp"
#include "cmpamp/losses.hpp"
#include "cmpamp/rng.hpp"
#include "cmpamp/runtime/distributed.hpp"
#include "cmpamp/se.hpp"

namespace cmpamp::harness {

enum class Algorithm { cmp, amp };

struct ExperimentSpec {
  InstanceParams instance;
  std::string instance_path;  // load instead of generate
  Algorithm algorithm = Algorithm::cmp;
  Denoiser denoiser = Denoiser::bayes({});
  Schedule schedule = Schedule::constant(10, 2);
  std::size_t amp_iterations = 0;  // 0: schedule.total_steps()
  DampingConfig damping;
  TauMode tau_mode = TauMode::estimated;
  ExecutionMode mode = ExecutionMode::sequential;
  std::vector<runtime::Endpoint> workers;
  runtime::Millis timeout{60000};
  std::size_t trials = 1;
  std::uint64_t seed = 0;
  std::vector<std::string> losses;
  se::ExpectationEngine engine;
  std::size_t threads = 0;

  std::size_t iterations() const { return amp_iterations ? amp_iterations : schedule.total_steps(); }

  std::vector<Pl2Loss> loss_objects() const {
    std::vector<Pl2Loss> out;
    for (const auto& name : losses) out.push_back(builtin_loss(name));
    return out;
  }

  void validate() const {
    if (trials < 1) throw ConfigError("trials must be >= 1");
    if (instance.n == 0) throw ConfigError("n must be >= 1");
    if (instance.sizes.empty()) throw ConfigError("need at least one column block");
    for (auto s : instance.sizes)
      if (s == 0) throw ConfigError("block sizes must be positive");
    try {
      instance.prior.validate();
      denoiser.validate();
      schedule.validate();
      damping.validate();
      for (const auto& name : losses) check_pl2(builtin_loss(name));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (!(instance.sigma_w_sq >= 0.0)) throw ConfigError("sigma_w_sq must be non-negative");
    if (!workers.empty() && workers.size() != instance.sizes.size())
      throw ConfigError("workers lists " + std::to_string(workers.size()) + " endpoints for " +
                        std::to_string(instance.sizes.size()) + " processors");
    if (algorithm == Algorithm::amp && mode != ExecutionMode::sequential)
      throw ConfigError("centralized AMP runs only in sequential mode");
  }
};

namespace detail {

template <typename F>
auto as_config_error(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace detail

inline ExperimentSpec spec_from_config(const Config& cfg) {
  ExperimentSpec spec;
  auto& ip = spec.instance;
  ip.n = cfg.get_count("n");
  if (cfg.explicitly_set("sizes")) {
    ip.sizes.clear();
    for (auto v : cfg.get_int_list("sizes")) {
      if (v <= 0) throw ConfigError("sizes entries must be positive");
      ip.sizes.push_back(static_cast<std::size_t>(v));
    }
  } else {
    const std::size_t P = cfg.get_count("P");
    if (P == 0) throw ConfigError("P must be >= 1");
    std::size_t N = 0;
    if (cfg.explicitly_set("N")) {
      N = cfg.get_count("N");
    } else {
      const double delta = cfg.get_real("delta");
      if (!(delta > 0.0)) throw ConfigError("delta must be positive");
      N = static_cast<std::size_t>(std::llround(static_cast<double>(ip.n) / delta));
    }
    if (N < P) throw ConfigError("need at least one column per processor");
    ip.sizes = equal_partition(N, P).sizes;
  }
  ip.prior.kind = detail::as_config_error("prior", [&] { return prior_kind_from_string(cfg.get_string("prior")); });
  ip.prior.epsilon = cfg.get_real("epsilon");
  ip.prior.nonzero_variance = cfg.get_real("nonzero_variance");
  ip.sigma_w_sq = cfg.get_real("sigma_w_sq");
  const auto matrix = cfg.get_string("matrix");
  if (matrix == "iid_gaussian") ip.matrix = MatrixKind::iid_gaussian;
  else if (matrix == "correlated_blocks") ip.matrix = MatrixKind::correlated_blocks;
  else throw ConfigError("matrix: unknown kind '" + matrix + "'");
  ip.column_correlation = cfg.get_real("column_correlation");
  if (!(ip.column_correlation >= 0.0 && ip.column_correlation <= 1.0))
    throw ConfigError("column_correlation must lie in [0, 1]");
  spec.instance_path = cfg.get_string("instance");

  const auto algorithm = cfg.get_string("algorithm");
  if (algorithm == "cmp") spec.algorithm = Algorithm::cmp;
  else if (algorithm == "amp") spec.algorithm = Algorithm::amp;
  else throw ConfigError("algorithm must be cmp or amp, got '" + algorithm + "'");

  const auto kind = detail::as_config_error("kind", [&] { return denoiser_kind_from_string(cfg.get_string("kind")); });
  switch (kind) {
    case DenoiserKind::soft_threshold: spec.denoiser = Denoiser::soft(cfg.get_real("alpha")); break;
    case DenoiserKind::bayes_bg:
      if (ip.prior.kind != PriorKind::bernoulli_gaussian)
        throw ConfigError("bayes_bg denoiser needs the bernoulli_gaussian prior");
      spec.denoiser = Denoiser::bayes(ip.prior);
      break;
    case DenoiserKind::zero: spec.denoiser = Denoiser::zero(); break;
  }

  const std::size_t s_hat = cfg.get_count("s_hat");
  const auto k_hats = cfg.get_int_list("k_hats");
  for (auto k : k_hats)
    if (k <= 0) throw ConfigError("k_hats entries must be >= 1");
  if (k_hats.size() == 1) {
    spec.schedule = Schedule::constant(s_hat, static_cast<std::size_t>(k_hats[0]));
  } else {
    if (k_hats.size() != s_hat)
      throw ConfigError("k_hats lists " + std::to_string(k_hats.size()) + " values but s_hat is " +
                        std::to_string(s_hat));
    spec.schedule.k_hats.assign(k_hats.begin(), k_hats.end());
  }
  if (cfg.explicitly_set("amp_iterations")) spec.amp_iterations = cfg.get_count("amp_iterations");

  spec.damping.rho = cfg.get_real("rho");
  const auto damp = cfg.get_string("damp");
  if (damp == "x") spec.damping.damp_r = false;
  else if (damp == "r") spec.damping.damp_x = false;
  else if (damp != "both") throw ConfigError("damp must be x, r or both");
  spec.tau_mode = detail::as_config_error("tau_mode", [&] { return tau_mode_from_string(cfg.get_string("tau_mode")); });
  spec.mode = detail::as_config_error("execution_mode",
                                      [&] { return execution_mode_from_string(cfg.get_string("execution_mode")); });
  for (const auto& w : cfg.get_string_list("workers"))
    spec.workers.push_back(detail::as_config_error("workers", [&] { return runtime::Endpoint::parse(w); }));
  spec.timeout = runtime::Millis(cfg.get_count("timeout_ms"));

  spec.trials = cfg.get_count("trials");
  spec.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  spec.losses = cfg.get_string_list("losses");
  for (const auto& name : spec.losses) {
    const auto names = builtin_loss_names();
    if (std::find(names.begin(), names.end(), name) == names.end())
      throw ConfigError("losses: '" + name + "' is not a registered loss");
  }
  spec.threads = cfg.get_count("threads");
  spec.engine.method = detail::as_config_error(
      "expectation", [&] { return se::expectation_method_from_string(cfg.get_string("expectation")); });
  spec.engine.nodes = cfg.get_count("hermite_nodes");
  spec.engine.mc_samples = cfg.get_count("mc_samples");
  spec.validate();
  return spec;
}

/// One recorded index of one trial. amp rows use s = t, k = 0, p = 0.
struct TrialRow {
  std::size_t s = 0, k = 0, p = 0;
  double mse = 0.0;
  double tau_hat = 0.0;
  double tau_se = 0.0;
  std::vector<double> losses;

  auto position() const noexcept { return std::tuple{s, k, p}; }
  bool operator==(const TrialRow&) const = default;
};

struct TrialResult {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::vector<TrialRow> rows;
  std::optional<Divergence> divergence;
};

/// SE side of every recorded index: mse and each configured loss.
struct Prediction {
  std::size_t s = 0, k = 0, p = 0;
  double tau_sq = 0.0;
  double mse = 0.0;
  std::vector<double> losses;
};

struct SummaryRow {
  std::size_t s = 0, k = 0, p = 0;
  std::size_t count = 0;
  double mse_mean = 0.0, mse_std = 0.0;
  std::vector<double> loss_mean, loss_std;
};

struct ExperimentResult {
  std::vector<std::string> loss_names;
  se::SeTrajectory se;
  std::vector<Prediction> predictions;  // aligned with se.entries
  std::vector<TrialResult> trials;
  std::vector<SummaryRow> summary;

  std::size_t diverged_trials() const {
    return static_cast<std::size_t>(
        std::count_if(trials.begin(), trials.end(), [](const TrialResult& t) { return t.divergence.has_value(); }));
  }
};

inline se::SeParams se_params_for(const ExperimentSpec& spec) {
  se::SeParams params;
  params.n = spec.instance.n;
  params.sizes = spec.instance.sizes;
  params.sigma_w_sq = spec.instance.sigma_w_sq;
  params.prior = spec.instance.prior;
  params.denoiser = spec.denoiser;
  params.engine = spec.engine;
  return params;
}

inline se::SeTrajectory spec_se(const ExperimentSpec& spec) {
  const auto params = se_params_for(spec);
  return spec.algorithm == Algorithm::amp ? se::run_se_amp(params, spec.iterations())
                                          : se::run_se_cmp(params, spec.schedule);
}

/// E phi(eta(X; tau -> 0), X): the pseudo-data is X itself once tau^2 = 0.
inline double noiseless_loss(const Denoiser& eta, const PriorSpec& prior,
                             const std::function<double(double, double)>& phi, const se::ExpectationEngine& engine) {
  double total = 0.0;
  for (const auto& c : se::detail::components(prior)) {
    if (c.gaussian) {
      const double sd = std::sqrt(prior.nonzero_variance);
      total += c.weight * se::detail::gaussian_expectation(
                              [&](double xi) { return phi(eta(sd * xi, kMinTau), sd * xi); }, {}, engine);
    } else {
      total += c.weight * phi(eta(c.mean, kMinTau), c.mean);
    }
  }
  return total;
}

/// mse from the SE variance, other losses by quadrature of
/// E phi(eta(X + tau Z), X) at the entry's tau.
inline std::vector<Prediction> predictions_for(const ExperimentSpec& spec, const se::SeTrajectory& se) {
  const auto losses = spec.loss_objects();
  std::vector<Prediction> out;
  for (const auto& e : se.entries) {
    Prediction pr{e.s, e.k, e.p, e.tau_sq, se.predicted_mse(e), {}};
    for (const auto& loss : losses) {
      if (loss.name == "squared_error") pr.losses.push_back(pr.mse);
      else if (e.tau_sq > 0.0)
        pr.losses.push_back(se::loss_expectation(std::sqrt(e.tau_sq), spec.denoiser, spec.instance.prior,
                                                 loss.evaluate, spec.engine));
      else
        pr.losses.push_back(noiseless_loss(spec.denoiser, spec.instance.prior, loss.evaluate, spec.engine));
    }
    out.push_back(std::move(pr));
  }
  return out;
}

inline ProblemInstance trial_instance(const ExperimentSpec& spec, std::size_t trial) {
  if (!spec.instance_path.empty()) {
    auto inst = read_instance(spec.instance_path, spec.instance.sigma_w_sq, spec.instance.prior);
    if (inst.rows() != spec.instance.n || inst.partition.sizes != spec.instance.sizes)
      throw ConfigError("instance " + spec.instance_path + " does not match the configured n and sizes");
    return inst;
  }
  return generate_instance(spec.instance, derive_seed(spec.seed, trial));
}

inline CmpOptions cmp_options(const ExperimentSpec& spec) {
  CmpOptions opts;
  opts.damping = spec.damping;
  opts.tau_mode = spec.tau_mode;
  opts.losses = spec.loss_objects();
  opts.engine = spec.engine;
  return opts;
}

/// Single C-MP-AMP run in the configured execution mode. `parallel` moves
/// messages through the in-process transport, `distributed` through TCP
/// (local worker threads on loopback, or the configured remote workers).
inline CmpResult run_cmp_mode(const ExperimentSpec& spec, const ProblemInstance& inst) {
  const auto opts = cmp_options(spec);
  switch (spec.mode) {
    case ExecutionMode::sequential: return run_cmp_amp(inst, spec.schedule, spec.denoiser, opts);
    case ExecutionMode::parallel: {
      runtime::TransportConfig tc;
      tc.kind = runtime::TransportKind::in_process;
      tc.timeout = spec.timeout;
      return runtime::run_distributed(inst, spec.schedule, spec.denoiser, opts, tc);
    }
    case ExecutionMode::distributed: {
      runtime::TransportConfig tc;
      tc.kind = runtime::TransportKind::tcp;
      tc.timeout = spec.timeout;
      return runtime::run_distributed(inst, spec.schedule, spec.denoiser, opts, tc);
    }
  }
  throw std::logic_error("unhandled execution mode");
}

inline TrialResult run_trial(const ExperimentSpec& spec, std::size_t index) {
  TrialResult tr;
  tr.index = index;
  tr.seed = derive_seed(spec.seed, index);
  const auto inst = trial_instance(spec, index);
  if (spec.algorithm == Algorithm::amp) {
    AmpOptions opts;
    opts.max_iter = spec.iterations();
    opts.stop_tol = 0.0;
    opts.tau_mode = spec.tau_mode;
    opts.losses = spec.loss_objects();
    opts.engine = spec.engine;
    auto res = run_amp(inst, spec.denoiser, opts);
    for (auto& r : res.records) tr.rows.push_back({r.t, 0, 0, r.mse, r.tau_hat, r.tau_se, std::move(r.losses)});
    tr.divergence = res.divergence;
  } else {
    auto res = run_cmp_mode(spec, inst);
    for (auto& r : res.records) tr.rows.push_back({r.s, r.k, r.p, r.mse, r.tau_hat, r.tau_se, std::move(r.losses)});
    tr.divergence = res.divergence;
  }
  return tr;
}

/// Per-index mean and sample std over the trials that reached the index,
/// accumulated in trial order.
inline std::vector<SummaryRow> summarize(const ExperimentResult& res) {
  const std::size_t L = res.loss_names.size();
  std::vector<SummaryRow> rows;
  for (const auto& pr : res.predictions) {
    SummaryRow row{pr.s, pr.k, pr.p, 0, 0.0, 0.0, std::vector<double>(L, 0.0), std::vector<double>(L, 0.0)};
    std::vector<const TrialRow*> hits;
    for (const auto& t : res.trials) {
      auto it = std::find_if(t.rows.begin(), t.rows.end(),
                             [&](const TrialRow& r) { return r.s == pr.s && r.k == pr.k && r.p == pr.p; });
      if (it != t.rows.end()) hits.push_back(&*it);
    }
    row.count = hits.size();
    if (hits.empty()) continue;
    const double c = static_cast<double>(hits.size());
    double sum = 0.0;
    for (auto* h : hits) sum += h->mse;
    row.mse_mean = sum / c;
    std::vector<double> lsum(L, 0.0);
    for (auto* h : hits)
      for (std::size_t l = 0; l < L; ++l) lsum[l] += h->losses[l];
    for (std::size_t l = 0; l < L; ++l) row.loss_mean[l] = lsum[l] / c;
    if (hits.size() > 1) {
      double sq = 0.0;
      std::vector<double> lsq(L, 0.0);
      for (auto* h : hits) {
        sq += (h->mse - row.mse_mean) * (h->mse - row.mse_mean);
        for (std::size_t l = 0; l < L; ++l) lsq[l] += (h->losses[l] - row.loss_mean[l]) * (h->losses[l] - row.loss_mean[l]);
      }
      row.mse_std = std::sqrt(sq / (c - 1.0));
      for (std::size_t l = 0; l < L; ++l) row.loss_std[l] = std::sqrt(lsq[l] / (c - 1.0));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Runs spec.trials independent trials (trial i on derive_seed(seed, i)),
/// spread over spec.threads threads and merged in trial order. Divergent
/// trials are recorded, not fatal.
inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  if (!spec.instance_path.empty() && spec.trials != 1)
    throw ConfigError("a loaded instance supports a single trial only");
  ExperimentResult res;
  res.loss_names = spec.losses;
  res.se = spec_se(spec);
  res.predictions = predictions_for(spec, res.se);
  res.trials.resize(spec.trials);

  std::size_t threads = spec.threads ? spec.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, spec.trials);
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < spec.trials; i = next++) res.trials[i] = run_trial(spec, i);
        } catch (...) {
          errors[w] = std::current_exception();
          next = spec.trials;
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  res.summary = summarize(res);
  return res;
}

// ---------------------------------------------------------------- compare

struct CompareRow {
  std::size_t s = 0, k = 0, p = 0;
  std::string loss;
  std::size_t trials = 0;
  double empirical_mean = 0.0;
  double std_error = 0.0;
  double se_prediction = 0.0;
  double abs_gap = 0.0;
  double rel_gap = 0.0;
  double tau_sq = 0.0;
};

struct CompareReport {
  std::vector<CompareRow> rows;  // mse first, then each configured loss, per index
  std::size_t diverged_trials = 0;

  /// Largest relative mse gap over indices with tau^2 above `min_tau_sq`.
  double max_rel_gap(double min_tau_sq, const std::string& loss = "mse") const {
    double worst = 0.0;
    for (const auto& r : rows)
      if (r.loss == loss && r.tau_sq > min_tau_sq) worst = std::max(worst, r.rel_gap);
    return worst;
  }
};

inline CompareReport compare_rows(const ExperimentResult& res) {
  CompareReport rep;
  rep.diverged_trials = res.diverged_trials();
  for (const auto& sum : res.summary) {
    auto pr = std::find_if(res.predictions.begin(), res.predictions.end(),
                           [&](const Prediction& p) { return p.s == sum.s && p.k == sum.k && p.p == sum.p; });
    auto add = [&](const std::string& name, double mean, double sd, double predicted) {
      CompareRow row{sum.s, sum.k, sum.p, name, sum.count, mean, sd / std::sqrt(static_cast<double>(sum.count)),
                     predicted, std::abs(mean - predicted), 0.0, pr->tau_sq};
      row.rel_gap = predicted != 0.0 ? row.abs_gap / std::abs(predicted) : (row.abs_gap == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
      rep.rows.push_back(row);
    };
    add("mse", sum.mse_mean, sum.mse_std, pr->mse);
    for (std::size_t l = 0; l < res.loss_names.size(); ++l)
      add(res.loss_names[l], sum.loss_mean[l], sum.loss_std[l], pr->losses[l]);
  }
  return rep;
}

/// Trial-mean losses against the SE prediction at every recorded index.
inline CompareReport compare_empirical_vs_se(const ExperimentSpec& spec) { return compare_rows(run_experiment(spec)); }

// ---------------------------------------------------------- concentration

struct ConcentrationRecord {
  std::size_t n = 0;
  std::size_t trials = 0;
  std::size_t diverged_trials = 0;
  std::size_t samples = 0;  // (trial, index) pairs measured
  double empirical_deviation_rate = 0.0;
  double mean_abs_deviation = 0.0;
  double max_abs_deviation = 0.0;
};

struct ConcentrationReport {
  double epsilon = 0.0;
  std::string loss = "mse";
  std::vector<ConcentrationRecord> records;
};

/// Same spec with n rows and every block scaled by n / spec.n, so each
/// delta_p stays (up to rounding) fixed.
inline ExperimentSpec scaled_spec(const ExperimentSpec& spec, std::size_t n) {
  ExperimentSpec out = spec;
  out.instance.n = n;
  for (auto& size : out.instance.sizes) {
    const auto scaled = std::llround(static_cast<double>(size) * static_cast<double>(n) / static_cast<double>(spec.instance.n));
    if (scaled < 1) throw ConfigError("n = " + std::to_string(n) + " leaves an empty column block");
    size = static_cast<std::size_t>(scaled);
  }
  return out;
}

/// For each n, the deviation |loss of trial i at (s,k,p) - SE prediction| is
/// collected over every trial and every recorded index. Reports the fraction
/// at or above epsilon and the mean and largest deviation.
inline ConcentrationReport concentration_study(const ExperimentSpec& spec, const std::vector<std::size_t>& n_grid,
                                               double epsilon, const std::string& loss = "mse") {
  if (n_grid.empty()) throw ConfigError("n_grid is empty");
  if (!std::is_sorted(n_grid.begin(), n_grid.end()) ||
      std::adjacent_find(n_grid.begin(), n_grid.end()) != n_grid.end())
    throw ConfigError("n_grid must be strictly ascending");
  if (!(epsilon > 0.0)) throw ConfigError("deviation epsilon must be positive");
  std::optional<std::size_t> loss_index;
  if (loss != "mse") {
    auto it = std::find(spec.losses.begin(), spec.losses.end(), loss);
    if (it == spec.losses.end()) throw ConfigError("study loss '" + loss + "' is not among the configured losses");
    loss_index = static_cast<std::size_t>(it - spec.losses.begin());
  }
  ConcentrationReport rep;
  rep.epsilon = epsilon;
  rep.loss = loss;
  for (std::size_t n : n_grid) {
    const auto res = run_experiment(scaled_spec(spec, n));
    ConcentrationRecord rec;
    rec.n = n;
    rec.trials = res.trials.size();
    rec.diverged_trials = res.diverged_trials();
    std::size_t over = 0;
    double sum = 0.0;
    for (const auto& t : res.trials) {
      for (const auto& row : t.rows) {
        auto pr = std::find_if(res.predictions.begin(), res.predictions.end(),
                               [&](const Prediction& p) { return p.s == row.s && p.k == row.k && p.p == row.p; });
        const double emp = loss_index ? row.losses[*loss_index] : row.mse;
        const double predicted = loss_index ? pr->losses[*loss_index] : pr->mse;
        const double d = std::abs(emp - predicted);
        ++rec.samples;
        sum += d;
        if (d >= epsilon) ++over;
        rec.max_abs_deviation = std::max(rec.max_abs_deviation, d);
      }
    }
    if (rec.samples) {
      rec.empirical_deviation_rate = static_cast<double>(over) / static_cast<double>(rec.samples);
      rec.mean_abs_deviation = sum / static_cast<double>(rec.samples);
    }
    rep.records.push_back(rec);
  }
  return rep;
}

// ------------------------------------------------------------ damping sweep

struct DampingRecord {
  double rho = 1.0;
  bool diverged = false;
  std::size_t divergence_step = 0;  // global inner-step index of the divergence
  double final_mse = 0.0;           // processor-mean mse at the last recorded round
  double plateau_spread = 0.0;      // (max - min) / mean of round mse over the window
  bool plateau = false;
};

/// Round-level mse (mean over processors of each round's last inner step).
inline std::vector<double> round_mse(const std::vector<CmpRecord>& records, const Schedule& schedule, std::size_t P) {
  std::vector<double> out;
  for (std::size_t s = 1; s <= schedule.s_hat(); ++s) {
    const std::size_t k = schedule.inner(s) - 1;
    double sum = 0.0;
    std::size_t hits = 0;
    for (const auto& r : records)
      if (r.s == s && r.k == k) {
        sum += r.mse;
        ++hits;
      }
    if (hits != P) break;
    out.push_back(sum / static_cast<double>(P));
  }
  return out;
}

/// One instance (trial 0 of spec), one run per rho. A plateau is a run that
/// did not diverge and whose round mse over the last `window` rounds stays
/// within `tol` relative spread.
inline std::vector<DampingRecord> damping_sweep(const ExperimentSpec& spec, const std::vector<double>& rhos,
                                                std::size_t window = 10, double tol = 0.1) {
  if (spec.algorithm != Algorithm::cmp) throw ConfigError("damping sweep runs the column-wise algorithm");
  if (rhos.empty()) throw ConfigError("rhos is empty");
  if (window == 0) throw ConfigError("plateau_window must be >= 1");
  const auto inst = trial_instance(spec, 0);
  std::vector<DampingRecord> out;
  for (double rho : rhos) {
    ExperimentSpec run = spec;
    run.damping.rho = rho;
    try {
      run.damping.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    const auto res = run_cmp_mode(run, inst);
    DampingRecord rec;
    rec.rho = rho;
    if (res.divergence) {
      rec.diverged = true;
      for (std::size_t u = 1; u < res.divergence->s; ++u) rec.divergence_step += spec.schedule.inner(u);
      rec.divergence_step += res.divergence->k;
    }
    const auto rounds = round_mse(res.records, spec.schedule, inst.processors());
    if (!rounds.empty()) rec.final_mse = rounds.back();
    if (!rec.diverged && rounds.size() >= window) {
      auto first = rounds.end() - static_cast<std::ptrdiff_t>(window);
      const auto [lo, hi] = std::minmax_element(first, rounds.end());
      double mean = 0.0;
      for (auto it = first; it != rounds.end(); ++it) mean += *it;
      mean /= static_cast<double>(window);
      rec.plateau_spread = mean > 0.0 ? (*hi - *lo) / mean : 0.0;
      rec.plateau = std::isfinite(mean) && rec.plateau_spread <= tol;
    } else {
      rec.plateau_spread = std::numeric_limits<double>::infinity();
    }
    out.push_back(rec);
  }
  return out;
}

}  // namespace cmpamp::harness
