// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cmpamp/amp.hpp"
#include "cmpamp/cmpamp.hpp"
#include "cmpamp/harness/config.hpp"
#include "cmpamp/harness/emit.hpp"
#include "cmpamp/harness/experiment.hpp"
#include "cmpamp/oracle.hpp"
#include "cmpamp/se.hpp"

using namespace cmpamp;
using namespace cmpamp::harness;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void verdict(const char* id, bool pass, const std::string& detail) {
  std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// Random split of N into P positive parts.
std::vector<std::size_t> random_sizes(std::mt19937_64& rng, std::size_t N, std::size_t P) {
  std::vector<std::size_t> cuts;
  std::uniform_int_distribution<std::size_t> pick(1, N - 1);
  while (cuts.size() < P - 1) {
    auto c = pick(rng);
    if (std::find(cuts.begin(), cuts.end(), c) == cuts.end()) cuts.push_back(c);
  }
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::size_t> sizes;
  std::size_t prev = 0;
  for (auto c : cuts) {
    sizes.push_back(c - prev);
    prev = c;
  }
  sizes.push_back(N - prev);
  return sizes;
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<>(lo, hi)(rng); }

// ------------------------------------------------------------------ 1

void equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20241);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t P = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(20, 100)(rng);
    const std::size_t N = std::uniform_int_distribution<std::size_t>(std::max<std::size_t>(P * 5, 30), 150)(rng);
    const std::size_t k_hat = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    InstanceParams ip;
    ip.n = n;
    ip.sizes = random_sizes(rng, N, P);
    ip.prior.epsilon = uniform(rng, 0.05, 0.3);
    ip.sigma_w_sq = uniform(rng, 1e-3, 0.05);
    const auto inst = generate_instance(ip, 1000 + i);
    const Denoiser eta = i % 2 ? Denoiser::bayes(ip.prior) : Denoiser::soft(uniform(rng, 0.8, 2.0));
    const auto rep = oracle::check_equivalence(inst, Schedule::constant(8, k_hat), eta, 8);
    worst = std::max(worst, std::isfinite(rep.max()) ? rep.max() : INFINITY);
  }
  const double secs = seconds_since(t0);
  verdict("1 equivalence", worst <= 1e-10 && secs < 30,
          fmt("max deviation %.3g (tol 1e-10) over 20 instances, %.2f s (limit 30 s)", worst, secs));
}

// ------------------------------------------------------------------ 2a

void se_single_inner() {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    se::SeParams params;
    const std::size_t P = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
    params.n = std::uniform_int_distribution<std::size_t>(50, 2000)(rng);
    const auto N = std::uniform_int_distribution<std::size_t>(std::max<std::size_t>(10, params.n / 3), 3 * params.n)(rng);
    params.sizes = random_sizes(rng, N, P);
    params.sigma_w_sq = std::exp(uniform(rng, std::log(1e-4), std::log(0.1)));
    params.prior.epsilon = uniform(rng, 0.02, 0.3);
    params.prior.nonzero_variance = uniform(rng, 0.5, 2.0);
    params.denoiser = draw % 2 ? Denoiser::bayes(params.prior) : Denoiser::soft(uniform(rng, 0.8, 2.0));
    const std::size_t T = 10;
    const auto a = se::run_se_amp(params, T);
    const auto c = se::run_se_cmp(params, Schedule::constant(T, 1));
    for (std::size_t t = 0; t < T; ++t) {
      const auto& ea = a.entries[t];
      for (std::size_t p = 0; p < P; ++p) {
        const auto& ec = c.entries[t * P + p];
        worst = std::max(worst, std::abs(ec.tau_sq - ea.tau_sq) / std::max(1.0, ea.tau_sq));
        worst = std::max(worst, std::abs(c.predicted_mse(ec) - a.predicted_mse(ea)) / std::max(1.0, a.predicted_mse(ea)));
      }
    }
  }
  verdict("2a se_single_inner", worst <= 1e-12, fmt("max gap %.3g (tol 1e-12) over 100 draws", worst));
}

// ------------------------------------------------------------------ 2b

void single_processor() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    InstanceParams ip;
    ip.n = 300;
    ip.sizes = {600};
    const auto inst = generate_instance(ip, seed);
    const Denoiser eta = seed % 2 ? Denoiser::bayes(ip.prior) : Denoiser::soft();
    const std::size_t T = 15;
    AmpOptions ao;
    ao.max_iter = T;
    ao.stop_tol = 0.0;
    const auto a = run_amp(inst, eta, ao);
    const auto c = run_cmp_amp(inst, Schedule::constant(T, 1), eta);
    if (a.records.size() != c.records.size()) {
      worst = INFINITY;
      break;
    }
    for (std::size_t t = 0; t < T; ++t) {
      worst = std::max(worst, std::abs(a.records[t].mse - c.records[t].mse));
      worst = std::max(worst, std::abs(a.records[t].tau_hat - c.records[t].tau_hat));
    }
    worst = std::max(worst, (a.state.x - c.processors[0].x).lpNorm<Eigen::Infinity>());
    worst = std::max(worst, (a.state.z - c.processors[0].z).lpNorm<Eigen::Infinity>());
  }
  verdict("2b single_processor", worst <= 1e-12,
          fmt("max trajectory gap %.3g (tol 1e-12) over 10 seeds", worst));
}

// ------------------------------------------------------------------ 3

void fixed_points() {
  const std::size_t n = 2100;  // N = n / delta is integral for every grid delta
  double worst = 0.0;
  int points = 0;
  for (double delta : {0.3, 0.5, 0.7}) {
    const auto N = static_cast<std::size_t>(std::llround(n / delta));
    for (double eps : {0.05, 0.1, 0.2}) {
      for (double sw : {0.001, 0.01}) {
        se::SeParams params;
        params.n = n;
        params.sigma_w_sq = sw;
        params.prior.epsilon = eps;
        params.denoiser = Denoiser::bayes(params.prior);
        params.sizes = {N};
        const double ref = se::fixed_point(se::SeMode::amp, params, 1, 1e-13).tau_sq;
        // equal halves with two inner steps, and an uneven three-way split
        params.sizes = {N / 2, N - N / 2};
        worst = std::max(worst, std::abs(se::fixed_point(se::SeMode::cmp, params, 2, 1e-13).tau_sq - ref));
        params.sizes = {N / 5, 3 * N / 10, N - N / 5 - 3 * N / 10};
        worst = std::max(worst, std::abs(se::fixed_point(se::SeMode::cmp, params, 3, 1e-13).tau_sq - ref));
        ++points;
      }
    }
  }
  verdict("3 fixed_points", worst <= 1e-10,
          fmt("max |tau^2_cmp - tau^2_amp| %.3g (tol 1e-10) over %g grid points", worst, points));
}

// ------------------------------------------------------------------ 4

ExperimentSpec default_spec() { return spec_from_config(Config{}); }

void concentration() {
  const auto t0 = Clock::now();
  auto spec = default_spec();
  spec = scaled_spec(spec, 2000);
  spec.trials = 50;
  const auto rep = compare_empirical_vs_se(spec);
  const double gap = rep.max_rel_gap(1e-3);
  std::size_t checked = 0;
  for (const auto& r : rep.rows)
    if (r.loss == "mse" && r.tau_sq > 1e-3) ++checked;
  const bool agree = gap <= 0.05 && rep.diverged_trials == 0 && checked > 0;

  auto base = default_spec();
  base.trials = 200;
  const auto study = concentration_study(base, {200, 500, 1000, 2000}, 0.05, "mse");
  bool decreasing = true;
  std::ostringstream devs;
  for (std::size_t i = 0; i < study.records.size(); ++i) {
    if (i && !(study.records[i].mean_abs_deviation < study.records[i - 1].mean_abs_deviation)) decreasing = false;
    devs << (i ? ", " : "") << study.records[i].n << ":" << study.records[i].mean_abs_deviation;
  }
  const double secs = seconds_since(t0);
  verdict("4a empirical_vs_se", agree,
          fmt("max relative mse gap %.4f (tol 0.05) over %g indices with tau^2>1e-3, 50 trials at n=2000, %g diverged",
              gap, static_cast<double>(checked), static_cast<double>(rep.diverged_trials)));
  verdict("4b concentration", decreasing, "mean_abs_deviation by n {" + devs.str() + "} must strictly decrease");
  verdict("4c runtime", secs < 600, fmt("%.1f s (limit 600 s)", secs));
}

// ------------------------------------------------------------------ 5

void quadrature() {
  std::mt19937_64 rng(99);
  double worst_z = 0.0;
  for (int i = 0; i < 20; ++i) {
    PriorSpec prior;
    prior.kind = i % 3 == 2 ? PriorKind::rademacher_sparse : PriorKind::bernoulli_gaussian;
    prior.epsilon = uniform(rng, 0.02, 0.5);
    prior.nonzero_variance = uniform(rng, 0.5, 2.0);
    const double tau = std::exp(uniform(rng, std::log(0.05), std::log(2.0)));
    const Denoiser eta = prior.kind == PriorKind::bernoulli_gaussian && i % 2 ? Denoiser::bayes(prior)
                                                                             : Denoiser::soft(uniform(rng, 0.5, 2.5));
    const double q = se::mse_expectation(tau, eta, prior);
    const auto mc = se::mse_expectation_mc(tau, eta, prior, 10'000'000, 500 + i);
    worst_z = std::max(worst_z, std::abs(q - mc.mean) / mc.std_error);
  }
  verdict("5a quadrature_vs_mc", worst_z <= 3.0,
          fmt("max |quad - mc| / std_error %.3f (limit 3) over 20 combos, 1e7 samples each", worst_z));

  double worst = 0.0;
  for (auto kind : {PriorKind::bernoulli_gaussian, PriorKind::rademacher_sparse}) {
    for (double eps : {0.05, 0.3, 1.0}) {
      for (double v : {0.5, 1.0, 3.0}) {
        PriorSpec prior{kind, eps, v};
        for (double tau : {0.01, 0.3, 1.0, 4.0}) {
          worst = std::max(worst, std::abs(se::mse_expectation(tau, Denoiser::identity(), prior) - tau * tau));
          worst = std::max(worst, std::abs(se::mse_expectation(tau, Denoiser::zero(), prior) - prior.second_moment()));
          if (kind == PriorKind::bernoulli_gaussian && eps == 1.0)
            worst = std::max(worst, std::abs(se::mse_expectation(tau, Denoiser::bayes(prior), prior) -
                                             v * tau * tau / (v + tau * tau)));
        }
      }
    }
  }
  verdict("5b closed_forms", worst <= 1e-10, fmt("max deviation %.3g (tol 1e-10)", worst));
}

// ------------------------------------------------------------------ 6

std::string csv_for(ExperimentSpec spec, ExecutionMode mode) {
  spec.mode = mode;
  std::ostringstream out;
  write_csv(out, trajectory_table(run_experiment(spec), spec.algorithm));
  return out.str();
}

void execution_modes() {
  std::vector<ExperimentSpec> specs;
  specs.push_back(default_spec());
  specs.push_back(spec_from_config(Config::parse_string(
      "n = 400\nsizes = 150,250,300,100\nkind = soft_threshold\ns_hat = 3\nk_hats = 1,3,2\n"
      "losses = absolute_error,estimate_power\ntrials = 2\nseed = 5\n")));
  specs.push_back(spec_from_config(Config::parse_string(
      "n = 300\nP = 3\nN = 900\nrho = 0.7\ntau_mode = state_evolution\ns_hat = 6\nk_hats = 2\nseed = 9\n")));
  bool same = true;
  std::size_t bytes = 0;
  for (const auto& spec : specs) {
    const auto seq = csv_for(spec, ExecutionMode::sequential);
    const bool ok = seq == csv_for(spec, ExecutionMode::parallel) && seq == csv_for(spec, ExecutionMode::distributed);
    same = same && ok;
    bytes += seq.size();
  }
  verdict("6 execution_modes", same,
          fmt("sequential / parallel / socket CSVs byte-identical for 3 configs (%g bytes each set)",
              static_cast<double>(bytes)));
}

// ------------------------------------------------------------------ 7

bool bit_equal(const std::vector<CmpRecord>& a, const std::vector<CmpRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].s != b[i].s || a[i].k != b[i].k || a[i].p != b[i].p) return false;
    if (std::memcmp(&a[i].mse, &b[i].mse, sizeof(double)) || std::memcmp(&a[i].tau_hat, &b[i].tau_hat, sizeof(double)))
      return false;
  }
  return true;
}

bool bit_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

void damping() {
  const auto spec = default_spec();
  const auto inst = trial_instance(spec, 0);
  const auto plain = run_cmp_amp(inst, spec.schedule, spec.denoiser);
  bool identical = true;
  for (auto [dx, dr] : {std::pair{true, true}, std::pair{true, false}, std::pair{false, true}}) {
    CmpOptions opt;
    opt.damping = {1.0, dx, dr};
    const auto damped = run_cmp_amp(inst, spec.schedule, spec.denoiser, opt);
    identical = identical && bit_equal(plain.records, damped.records);
    for (std::size_t p = 0; p < plain.processors.size(); ++p)
      identical = identical && bit_equal(plain.processors[p].x, damped.processors[p].x) &&
                  bit_equal(plain.processors[p].z, damped.processors[p].z);
  }
  verdict("7a undamped_identity", identical, "rho = 1 records and final states bit-identical to the undamped run");

  // Hard instance: mildly correlated columns within each block, loose threshold.
  const auto hard = spec_from_config(Config::parse_string(
      "n = 500\nP = 2\nkind = soft_threshold\ns_hat = 50\nk_hats = 1\nmatrix = correlated_blocks\n"
      "column_correlation = 0.01\nseed = 0\n"));
  const auto recs = damping_sweep(hard, {1.0, 0.7, 0.5, 0.3}, 10, 0.1);
  const bool undamped_diverges = recs[0].diverged && recs[0].divergence_step < 50;
  bool damped_plateau = false;
  std::ostringstream line;
  for (const auto& r : recs) {
    if (r.rho < 1.0 && !r.diverged && r.plateau && std::isfinite(r.final_mse)) damped_plateau = true;
    line << " rho=" << r.rho << (r.diverged ? ":diverged@" + std::to_string(r.divergence_step)
                                            : ":mse=" + cmpamp::detail::format_double(r.final_mse) +
                                                  (r.plateau ? "(plateau)" : "(no plateau)"));
  }
  verdict("7b damping_rescue", undamped_diverges && damped_plateau, "correlated-block instance," + line.str());
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  struct Step {
    const char* name;
    void (*run)();
  };
  for (const Step& s : {Step{"1", equivalence}, Step{"2a", se_single_inner}, Step{"2b", single_processor},
                        Step{"3", fixed_points}, Step{"4", concentration}, Step{"5", quadrature},
                        Step{"6", execution_modes}, Step{"7", damping}}) {
    try {
      s.run();
    } catch (const std::exception& e) {
      verdict(s.name, false, std::string("threw: ") + e.what());
    }
  }
  std::printf("%d failing criteria, %.1f s total\n", failures, seconds_since(t0));
  return failures ? 1 : 0;
}
