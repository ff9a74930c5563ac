#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cmpamp/se.hpp"

using namespace cmpamp;
using namespace cmpamp::se;

namespace {

PriorSpec bg(double eps, double v = 1.0) { return {PriorKind::bernoulli_gaussian, eps, v}; }

SeParams params_for(std::size_t n, std::vector<std::size_t> sizes, double sigma_w_sq, PriorSpec prior,
                    DenoiserSchedule eta) {
  SeParams p;
  p.n = n;
  p.sizes = std::move(sizes);
  p.sigma_w_sq = sigma_w_sq;
  p.prior = prior;
  p.denoiser = std::move(eta);
  return p;
}

// Direct transcription of the column-wise recursion, indexed as written:
// sig[s][k][p] with the cross term summed over u != p and the round-start value
// taken from the end of the previous round.
std::vector<SeEntry> transcribe_cmp(const SeParams& prm, const Schedule& sched) {
  const std::size_t P = prm.sizes.size();
  std::vector<double> delta(P);
  for (std::size_t p = 0; p < P; ++p) delta[p] = double(prm.n) / double(prm.sizes[p]);
  std::vector<std::vector<std::vector<double>>> sig(sched.s_hat() + 1);
  sig[0].assign(1, std::vector<double>(P));
  for (std::size_t p = 0; p < P; ++p) sig[0][0][p] = prm.prior.second_moment() / delta[p];
  std::vector<SeEntry> out;
  std::size_t t = 0;
  for (std::size_t s = 1; s <= sched.s_hat(); ++s) {
    const std::size_t K = sched.inner(s);
    sig[s].assign(K + 1, std::vector<double>(P));
    sig[s][0] = sig[s - 1].back();
    for (std::size_t k = 0; k < K; ++k, ++t) {
      for (std::size_t p = 0; p < P; ++p) {
        double tau_sq = prm.sigma_w_sq + sig[s][k][p];
        for (std::size_t u = 0; u < P; ++u)
          if (u != p) tau_sq += sig[s][0][u];
        sig[s][k + 1][p] = mse_expectation(std::sqrt(tau_sq), prm.denoiser.at(t), prm.prior) / delta[p];
        out.push_back({s, k, p, sig[s][k][p], tau_sq, sig[s][k + 1][p]});
      }
    }
  }
  return out;
}

}  // namespace

TEST(MseExpectation, ClosedForms) {
  for (double tau : {0.05, 0.3, 1.0, 2.5}) {
    EXPECT_NEAR(mse_expectation(tau, Denoiser::identity(), bg(0.1)), tau * tau, 1e-10);
    EXPECT_NEAR(mse_expectation(tau, Denoiser::zero(), bg(0.1)), 0.1, 1e-10);
    // Gaussian prior with its linear posterior mean: MSE v tau^2 / (v + tau^2)
    const auto g = bg(1.0, 2.0);
    EXPECT_NEAR(mse_expectation(tau, Denoiser::bayes(g), g), 2.0 * tau * tau / (2.0 + tau * tau), 1e-10);
    EXPECT_NEAR(mse_expectation(tau, Denoiser::identity(), g), tau * tau, 1e-10);
  }
  EXPECT_THROW(mse_expectation(0.0, Denoiser::soft(), bg(0.1)), std::invalid_argument);
  EXPECT_THROW(mse_expectation(-1.0, Denoiser::soft(), bg(0.1)), std::invalid_argument);
}

TEST(MseExpectation, AgreesWithMonteCarlo) {
  const double tau = 0.5;
  const auto prior = bg(0.1);
  const auto eta = Denoiser::soft();
  const double quad = mse_expectation(tau, eta, prior);
  const auto mc = mse_expectation_mc(tau, eta, prior, 10000000, 42);
  EXPECT_LE(std::abs(quad - mc.mean), 3.0 * mc.std_error) << quad << " vs " << mc.mean << " +- " << mc.std_error;

  const PriorSpec rad{PriorKind::rademacher_sparse, 0.2, 1.0};
  const double q2 = mse_expectation(0.4, Denoiser::soft(1.5), rad);
  const auto m2 = mse_expectation_mc(0.4, Denoiser::soft(1.5), rad, 2000000, 7);
  EXPECT_LE(std::abs(q2 - m2.mean), 3.0 * m2.std_error);
}

TEST(MseExpectation, HermiteAndAdaptiveAgreeOnSmoothCases) {
  ExpectationEngine gh{ExpectationMethod::gauss_hermite, 61};
  const auto prior = bg(0.3, 1.0);
  for (double tau : {0.5, 1.0, 2.0}) {
    EXPECT_NEAR(mse_expectation(tau, Denoiser::identity(), prior, gh), tau * tau, 1e-10);
    EXPECT_NEAR(mse_expectation(tau, Denoiser::bayes(prior), prior, gh),
                mse_expectation(tau, Denoiser::bayes(prior), prior), 1e-5);
  }
  // Hermite rule weights sum to one and integrate z^2 exactly.
  const auto& rule = se::detail::hermite_rule(61);
  double w = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    w += rule.weights[i];
    m2 += rule.weights[i] * rule.nodes[i] * rule.nodes[i];
  }
  EXPECT_NEAR(w, 1.0, 1e-12);
  EXPECT_NEAR(m2, 1.0, 1e-12);
}

TEST(LossExpectation, SquaredLossMatchesMse) {
  const auto prior = bg(0.1);
  auto sq = [](double a, double b) { return (a - b) * (a - b); };
  for (const auto& eta : {Denoiser::soft(), Denoiser::bayes(prior)})
    EXPECT_NEAR(loss_expectation(0.4, eta, prior, sq), mse_expectation(0.4, eta, prior), 1e-8);
}

TEST(AmpSeStep, Examples) {
  const auto prior = bg(0.1);
  auto p = params_for(500, {1000}, 0.01, prior, Denoiser::zero());
  auto traj = run_se_amp(p, 3);
  EXPECT_NEAR(traj.initial_sigma_sq[0], 0.2, 1e-15);
  EXPECT_NEAR(traj.entries[0].tau_sq, 0.21, 1e-15);
  // zero denoiser: stationary at E[X^2] / delta
  for (const auto& e : traj.entries) EXPECT_NEAR(e.next_sigma_sq, 0.2, 1e-12);
  auto id = amp_se_step(0.3, 0.01, 0.5, Denoiser::identity(), prior);
  EXPECT_NEAR(id.next_sigma_sq, id.tau_sq / 0.5, 1e-10);
  EXPECT_THROW(amp_se_step(-0.1, 0.01, 0.5, Denoiser::soft(), prior), std::invalid_argument);
}

TEST(CmpSeStep, RoundStartIsProcessorIndependent) {
  const auto prior = bg(0.1);
  std::vector<double> deltas{2.0, 4.0, 4.0 / 3.0};
  auto state = CmpSeState::start_round({0.05, 0.025, 0.075});
  auto step = cmp_se_step(state, 0.01, deltas, Denoiser::soft(), prior);
  EXPECT_EQ(step.tau_sq[0], step.tau_sq[1]);
  EXPECT_EQ(step.tau_sq[1], step.tau_sq[2]);
  EXPECT_THROW(cmp_se_step(state, 0.01, std::vector<double>{2.0}, Denoiser::soft(), prior),
               std::invalid_argument);
}

TEST(CmpSeStep, SingleProcessorReducesToAmp) {
  const auto prior = bg(0.1);
  auto p = params_for(500, {1000}, 0.01, prior, Denoiser::bayes(prior));
  auto cmp = run_se_cmp(p, Schedule::constant(4, 3));
  auto amp = run_se_amp(p, 12);
  ASSERT_EQ(cmp.entries.size(), amp.entries.size());
  for (std::size_t i = 0; i < amp.entries.size(); ++i) {
    EXPECT_NEAR(cmp.entries[i].tau_sq, amp.entries[i].tau_sq, 1e-14);
    EXPECT_NEAR(cmp.entries[i].next_sigma_sq, amp.entries[i].next_sigma_sq, 1e-14);
  }
}

TEST(RunSeCmp, MatchesTranscription) {
  const auto prior = bg(0.1);
  for (auto [sizes, sched] :
       {std::pair{std::vector<std::size_t>{500, 500}, Schedule::constant(5, 3)},
        std::pair{std::vector<std::size_t>{300, 700}, Schedule::constant(4, 4)},
        std::pair{std::vector<std::size_t>{200, 300, 500}, Schedule{{1, 4, 2, 3}}}}) {
    auto p = params_for(500, sizes, 0.01, prior, Denoiser::bayes(prior));
    auto traj = run_se_cmp(p, sched);
    auto ref = transcribe_cmp(p, sched);
    ASSERT_EQ(traj.entries.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_EQ(traj.entries[i].s, ref[i].s);
      EXPECT_EQ(traj.entries[i].k, ref[i].k);
      EXPECT_EQ(traj.entries[i].p, ref[i].p);
      EXPECT_NEAR(traj.entries[i].tau_sq, ref[i].tau_sq, 1e-12 * ref[i].tau_sq);
      EXPECT_NEAR(traj.entries[i].next_sigma_sq, ref[i].next_sigma_sq, 1e-11 * ref[i].next_sigma_sq);
      EXPECT_GE(traj.entries[i].tau_sq, p.sigma_w_sq);
    }
  }
}

TEST(RunSe, EmptyScheduleHoldsInitialization) {
  auto p = params_for(500, {500, 500}, 0.01, bg(0.1), Denoiser::soft());
  auto traj = run_se(SeMode::cmp, Schedule{}, p);
  EXPECT_TRUE(traj.entries.empty());
  ASSERT_EQ(traj.initial_sigma_sq.size(), 2u);
  EXPECT_NEAR(traj.initial_sigma_sq[0], 0.1, 1e-15);
}

TEST(RunSe, UnitInnerScheduleMatchesAmp) {
  CounterRng rng(11, Stream::monte_carlo);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int draw = 0; draw < 10; ++draw) {
    const std::size_t P = 1 + static_cast<std::size_t>(unit(rng) * 4);
    std::vector<std::size_t> sizes;
    for (std::size_t p = 0; p < P; ++p) sizes.push_back(50 + static_cast<std::size_t>(unit(rng) * 400));
    const auto prior = bg(0.02 + 0.3 * unit(rng), 0.5 + unit(rng));
    auto prm = params_for(100 + static_cast<std::size_t>(unit(rng) * 800), sizes, 0.001 + 0.05 * unit(rng),
                          prior, unit(rng) < 0.5 ? Denoiser::soft(0.5 + 2 * unit(rng)) : Denoiser::bayes(prior));
    auto cmp = run_se(SeMode::cmp, Schedule::constant(8, 1), prm);
    auto amp = run_se(SeMode::amp, Schedule::constant(8, 1), prm);
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t p = 0; p < P; ++p)
        EXPECT_NEAR(cmp.find(t + 1, 0, p)->tau_sq, amp.entries[t].tau_sq, 1e-12) << "draw " << draw;
  }
}

TEST(SeParams, Validation) {
  auto p = params_for(0, {10}, 0.01, bg(0.1), Denoiser::soft());
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = params_for(10, {10, 0}, 0.01, bg(0.1), Denoiser::soft());
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = params_for(10, {10}, -0.01, bg(0.1), Denoiser::soft());
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = params_for(7, {3, 5, 11}, 0.0, bg(0.1), Denoiser::soft());
  double inv = 0.0;
  for (std::size_t u = 0; u < 3; ++u) inv += 1.0 / p.delta_p(u);
  EXPECT_NEAR(inv, 1.0 / p.delta(), 1e-14);
  EXPECT_NO_THROW(p.validate());
}

TEST(FixedPoint, ZeroDenoiserSettlesInOneSweep) {
  auto p = params_for(500, {1000}, 0.01, bg(0.1), Denoiser::zero());
  auto fp = fixed_point(SeMode::amp, p, 1, 1e-12);
  EXPECT_EQ(fp.sweeps, 1u);
  EXPECT_NEAR(fp.tau_sq, 0.01 + 0.1 / 0.5, 1e-15);
}

TEST(FixedPoint, AmpAndCmpAgree) {
  const auto prior = bg(0.1);
  auto p = params_for(1000, {1000, 1000}, 0.01, prior, Denoiser::bayes(prior));
  const double tol = 1e-10;
  auto amp = fixed_point(SeMode::amp, p, 1, tol);
  for (std::size_t k_hat : {1u, 2u, 5u}) {
    auto cmp = fixed_point(SeMode::cmp, p, k_hat, tol);
    EXPECT_NEAR(cmp.tau_sq, amp.tau_sq, tol) << "k_hat " << k_hat;
    EXPECT_LE(cmp.residual, tol);
    EXPECT_LE(cmp.processor_spread, 1e-8);
  }
  EXPECT_LE(amp.residual, tol);
  EXPECT_GE(amp.tau_sq, p.sigma_w_sq);
}

TEST(FixedPoint, MatchesTranscribedIteration) {
  const auto prior = bg(0.1);
  auto p = params_for(500, {1000}, 0.01, prior, Denoiser::bayes(prior));
  // Plain iteration of tau^2 = sigma_w^2 + E(tau) / delta, many more sweeps than needed.
  double tau_sq = 0.01 + 0.1 / 0.5;
  for (int i = 0; i < 2000; ++i)
    tau_sq = 0.01 + mse_expectation(std::sqrt(tau_sq), Denoiser::bayes(prior), prior) / 0.5;
  auto fp = fixed_point(SeMode::amp, p, 1, 1e-12);
  EXPECT_NEAR(fp.tau_sq, tau_sq, 1e-11);
}

TEST(FixedPoint, ReportsNonConvergence) {
  const auto prior = bg(0.1);
  auto p = params_for(500, {1000}, 0.01, prior, Denoiser::bayes(prior));
  EXPECT_THROW(fixed_point(SeMode::amp, p, 1, 1e-12, 2), ConvergenceError);
  EXPECT_THROW(fixed_point(SeMode::amp, p, 1, 0.0), std::invalid_argument);
  EXPECT_THROW(fixed_point(SeMode::cmp, p, 0, 1e-10), std::invalid_argument);
}

TEST(SeNames, RoundTrip) {
  for (auto m : {ExpectationMethod::adaptive, ExpectationMethod::gauss_hermite, ExpectationMethod::monte_carlo})
    EXPECT_EQ(expectation_method_from_string(to_string(m)), m);
  EXPECT_EQ(se_mode_from_string("cmp"), SeMode::cmp);
  EXPECT_THROW(se_mode_from_string("foo"), std::invalid_argument);
}
