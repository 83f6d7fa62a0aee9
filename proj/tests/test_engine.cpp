#include <cmath>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "qcm/engine.hpp"
#include "qcm/exact.hpp"
#include "qcm/observables.hpp"
#include "test_util.hpp"

using namespace qcm;

namespace {

double full_action(const Engine& e) { return action(e.lattice(), e.params(), e.kernel()); }

/// Chi-squared p-value of visit counts against exact probabilities.
double distribution_p_value(const std::vector<double>& counts, const std::vector<double>& prob) {
  double total = 0.0;
  for (double c : counts) total += c;
  double chi2 = 0.0;
  for (std::size_t k = 0; k < prob.size(); ++k) {
    const double expect = total * prob[k];
    chi2 += (counts[k] - expect) * (counts[k] - expect) / expect;
  }
  boost::math::chi_squared dist(static_cast<double>(prob.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, chi2));
}

}  // namespace

TEST(DeltaAction, MatchesFullActionDifference) {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> uJ(-1.5, 1.5), uB(0.1, 2.0), ua(0.0, 1.5);
  std::uniform_int_distribution<int> un(2, 8);
  const double exps[] = {0.5, 1.0, 2.0};
  int checked = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const ModelParams p{uJ(gen), uB(gen), ua(gen), exps[rep % 3], un(gen), un(gen)};
    Engine e(p, 1234, static_cast<std::uint64_t>(rep));
    for (int k = 0; k < 10; ++k) {
      const int i = static_cast<int>(gen() % static_cast<unsigned>(p.Nx));
      const int t = static_cast<int>(gen() % static_cast<unsigned>(p.Ntau));
      auto lat = e.lattice();
      const double before = full_action(e);
      const double ds = e.delta_action_flip(i, t);
      lat.flip(i, t);
      e.set_lattice(lat);
      EXPECT_NEAR(full_action(e) - before, ds, 1e-10);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 1000);
}

TEST(DeltaAction, FlipIsInvolution) {
  const ModelParams p{0.8, 1.0, 0.8, 1.0, 4, 8};
  Engine e(p, 7, 0);
  for (int i = 0; i < p.Nx; ++i)
    for (int t = 0; t < p.Ntau; ++t) {
      const double ds = e.delta_action_flip(i, t);
      auto lat = e.lattice();
      lat.flip(i, t);
      Engine flipped = e;
      flipped.set_lattice(lat);
      EXPECT_NEAR(ds + flipped.delta_action_flip(i, t), 0.0, 1e-12);
    }
}

TEST(DeltaAction, AllUpTwoByTwo) {
  const ModelParams p{1.0, 1.0, 0.0, 1.0, 2, 2};
  Engine e(p, 1, 0, StartState::ordered);
  // neighbours in both directions are the same spin twice: 2 (2J + 2 Gamma)
  EXPECT_NEAR(e.delta_action_flip(0, 0), 2.0 * (2.0 * 1.0 + 2.0 * gamma_from_field(1.0)), 1e-12);
  auto lat = e.lattice();
  const double before = full_action(e);
  lat.flip(0, 0);
  e.set_lattice(lat);
  EXPECT_NEAR(full_action(e) - before, 2.0 * (2.0 + 2.0 * gamma_from_field(1.0)), 1e-12);
}

TEST(DeltaAction, RandomFlipsOnBathLattice) {
  const ModelParams p{1.0, 1.0, 0.8, 1.0, 4, 8};
  Engine e(p, 2024, 3);
  std::mt19937_64 gen(1);
  for (int k = 0; k < 50; ++k) {
    const int i = static_cast<int>(gen() % 4), t = static_cast<int>(gen() % 8);
    const double before = full_action(e);
    const double ds = e.delta_action_flip(i, t);
    auto lat = e.lattice();
    lat.flip(i, t);
    e.set_lattice(lat);
    EXPECT_NEAR(full_action(e) - before, ds, 1e-10);
  }
  EXPECT_THROW(e.delta_action_flip(4, 0), UsageError);
}

TEST(Sweep, FreeSpinsAlwaysFlip) {
  const ModelParams p{0.0, std::numeric_limits<double>::infinity(), 0.0, 1.0, 3, 5};
  Engine e(p, 5, 0);
  const auto before = e.lattice();
  e.sweep();
  auto expected = before;
  expected.flip_all();
  EXPECT_EQ(e.lattice(), expected);
  EXPECT_EQ(e.accepted(), 15u);
  EXPECT_EQ(e.sweeps_done(), 1);
}

TEST(Sweep, SameSeedSameTrajectory) {
  const ModelParams p{0.9, 1.0, 0.3, 1.0, 6, 12};
  Engine a(p, 42, 7), b(p, 42, 7), c(p, 42, 8);
  for (int k = 0; k < 200; ++k) {
    a.sweep();
    b.sweep();
    c.sweep();
  }
  EXPECT_EQ(a.lattice(), b.lattice());
  EXPECT_EQ(a.checkpoint(), b.checkpoint());
  EXPECT_NE(a.lattice(), c.lattice());
}

TEST(Sweep, EquilibrateBookkeeping) {
  const ModelParams p{1.0, 1.0, 0.0, 1.0, 4, 4};
  Engine e(p, 1, 1);
  const auto lat = e.lattice();
  const auto rng = e.rng();
  e.equilibrate(0);
  EXPECT_EQ(e.lattice(), lat);
  EXPECT_EQ(e.rng(), rng);
  EXPECT_EQ(e.sweeps_done(), 0);
  e.equilibrate(37);
  EXPECT_EQ(e.sweeps_done(), 37);
}

TEST(Sweep, ThinningBookkeeping) {
  const ModelParams p{1.0, 1.0, 0.0, 1.0, 4, 4};
  Engine e(p, 1, 1);
  RunPlan plan;
  plan.n_samples = 100;
  plan.thinning = 5;
  const auto series = e.sample_run(plan);
  EXPECT_EQ(series.size(), 100u);
  EXPECT_EQ(e.sweeps_done(), 500);
}

TEST(Sweep, FrozenChainHasZeroVariance) {
  const ModelParams p{50.0, 5.0, 0.0, 1.0, 4, 4};
  Engine e(p, 3, 0, StartState::ordered);
  RunPlan plan;
  plan.n_samples = 64;
  const auto series = e.sample_run(plan);
  for (auto m : series.sum_s) EXPECT_EQ(m, 16);
  const auto chi = susceptibility(series);
  EXPECT_EQ(chi.mean, 0.0);
  EXPECT_EQ(chi.std_error, 0.0);
  EXPECT_TRUE(chi.degenerate);
}

TEST(Sweep, BudgetRefusal) {
  const ModelParams p{1.0, 1.0, 0.5, 1.0, 64, 256};
  Engine e(p, 1, 0);
  RunPlan plan;
  plan.n_samples = 1'000'000;
  plan.thinning = 100;
  plan.max_proposals = 1e12;
  EXPECT_THROW(e.sample_run(plan), BudgetError);
  EXPECT_EQ(e.sweeps_done(), 0);
}

TEST(Sweep, SampleRunRecordsConsistentStreams) {
  const ModelParams p{0.5, 1.0, 0.2, 1.0, 4, 6};
  Engine e(p, 9, 0);
  RunPlan plan;
  plan.n_samples = 50;
  plan.measure_correlations = true;
  plan.max_r = 2;
  const auto series = e.sample_run(plan);
  ASSERT_EQ(series.n_r, 3);
  for (std::size_t k = 0; k < series.size(); ++k) {
    EXPECT_LE(std::abs(series.sum_s[k]), 24);
    EXPECT_EQ(series.sum_s_sq[k], series.sum_s[k] * series.sum_s[k]);
    EXPECT_EQ(series.abs_sum_s[k], std::abs(series.sum_s[k]));
    EXPECT_EQ(series.corr_row(k)[0], 1.0);
  }
  EXPECT_EQ(series.meta.master_seed, 9u);
  EXPECT_EQ(series.meta.params, p);
}

TEST(Checkpoint, ResumeIsBitIdentical) {
  for (double alpha : {0.0, 0.6}) {
    const ModelParams p{0.8, 1.0, alpha, 1.0, 5, 16};
    Engine straight(p, 77, 2);
    Engine interrupted(p, 77, 2);
    straight.equilibrate(30);
    interrupted.equilibrate(30);
    const auto bytes = interrupted.checkpoint();
    Engine resumed = Engine::restore(bytes);
    EXPECT_EQ(resumed.checkpoint(), bytes);
    straight.equilibrate(100);
    resumed.equilibrate(100);
    EXPECT_EQ(straight.lattice(), resumed.lattice());
    EXPECT_EQ(straight.checkpoint(), resumed.checkpoint());
  }
}

TEST(Checkpoint, RandomSiteOrderSurvivesRoundTrip) {
  const ModelParams p{0.8, 1.0, 0.4, 1.0, 4, 8};
  Engine a(p, 5, 5, StartState::random, SweepOrder::random_site);
  a.equilibrate(10);
  Engine b = Engine::restore(a.checkpoint());
  EXPECT_EQ(b.order(), SweepOrder::random_site);
  a.equilibrate(10);
  b.equilibrate(10);
  EXPECT_EQ(a.lattice(), b.lattice());
}

TEST(Checkpoint, TruncatedStreamIsLoadError) {
  const ModelParams p{0.8, 1.0, 0.0, 1.0, 4, 4};
  const auto bytes = Engine(p, 1, 0).checkpoint();
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    EXPECT_THROW(Engine::restore(part), CheckpointError) << "cut at " << cut;
  }
}

TEST(Checkpoint, CorruptionAndVersionMismatchAreLoadErrors) {
  const ModelParams p{0.8, 1.0, 0.0, 1.0, 4, 4};
  auto bytes = Engine(p, 1, 0).checkpoint();
  auto flipped = bytes;
  flipped[20] ^= 0x40;
  EXPECT_THROW(Engine::restore(flipped), CheckpointError);

  // Rewrite the version field and reseal so only the version check can fail.
  std::vector<std::uint8_t> body(bytes.begin(), bytes.end() - 8);
  body[8] = 99;
  ByteWriter w;
  w.bytes(body);
  w.seal();
  try {
    Engine::restore(w.buffer());
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("format_version"), std::string::npos);
  }
}

TEST(Sampler, MatchesExactDistributionTwoByThree) {
  const ModelParams p{0.3, 1.0, 0.2, 1.0, 2, 3};
  const auto prob = exact_distribution(p);
  for (auto order : {SweepOrder::typewriter, SweepOrder::random_site}) {
    Engine e(p, 31337, 0, StartState::random, order);
    e.equilibrate(100);
    std::vector<double> counts(prob.size(), 0.0);
    for (int k = 0; k < 200000; ++k) {
      e.equilibrate(2);
      counts[e.lattice().to_bits()] += 1.0;
    }
    EXPECT_GT(distribution_p_value(counts, prob), 0.01) << "order " << static_cast<int>(order);
  }
}

TEST(Sampler, OrderedAndRandomStartsAgree) {
  const ModelParams p{0.8, 1.0, 0.3, 1.0, 2, 3};
  const auto exact = enumerate(p);
  std::vector<ErrorEstimate> est;
  for (auto start : {StartState::ordered, StartState::random}) {
    Engine e(p, 11, start == StartState::ordered ? 0 : 1, start);
    e.equilibrate(10000);
    RunPlan plan;
    plan.n_samples = 40000;
    const auto s = e.sample_run(plan);
    est.push_back(binned_error(s.sum_sq_as_double()));
  }
  const double comb = std::hypot(est[0].std_error, est[1].std_error);
  EXPECT_LT(std::abs(est[0].mean - est[1].mean), 3.0 * comb);
  for (const auto& x : est) EXPECT_LT(std::abs(x.mean - exact.mean_sum_sq), 3.0 * x.std_error);
}

TEST(Sampler, SusceptibilityOfFreeSpinsIsOne) {
  const ModelParams p{0.0, std::numeric_limits<double>::infinity(), 0.0, 1.0, 4, 4};
  Engine e(p, 8, 0, StartState::random, SweepOrder::random_site);
  RunPlan plan;
  plan.n_samples = 20000;
  const auto chi = susceptibility(e.sample_run(plan));
  EXPECT_LT(std::abs(chi.mean - 1.0), 3.0 * chi.std_error);
}

TEST(BurnIn, AutoRuleStartsAtTenTimesLongerSide) {
  const ModelParams p{0.3, 1.0, 0.0, 1.0, 4, 8};
  EXPECT_EQ(auto_burn_in(p, 5, 0), 80);
  EXPECT_EQ(auto_burn_in(p, 5, 0), auto_burn_in(p, 5, 0));

  RunPlan plan;
  plan.burn_in_sweeps = kAutoBurnIn;
  plan.n_samples = 10;
  Engine e(p, 5, 0);
  const auto series = e.run(plan);
  EXPECT_EQ(series.meta.sweeps_before_sampling, 80);
  EXPECT_EQ(e.sweeps_done(), 90);
}

TEST(BurnIn, LengthIsADoublingOfTheStartAndFrozenChainsGiveUp) {
  const ModelParams crit{1.0, 1.0, 0.0, 1.0, 16, 16};
  const auto b = auto_burn_in(crit, 1, 0);
  EXPECT_EQ(b % 160, 0);
  // stripes of a quenched random start never meet the ordered start
  const ModelParams frozen{50.0, 5.0, 0.0, 1.0, 8, 8};
  EXPECT_THROW(auto_burn_in(frozen, 1, 0), NumericalError);
}

TEST(BurnIn, JsonSpelling) {
  RunPlan plan;
  plan.burn_in_sweeps = kAutoBurnIn;
  const nlohmann::json j = plan;
  EXPECT_EQ(j["burn_in_sweeps"], "auto");
  EXPECT_EQ(j.get<RunPlan>().burn_in_sweeps, kAutoBurnIn);
  EXPECT_EQ(nlohmann::json::parse(R"({"n_samples": 4})").get<RunPlan>().burn_in_sweeps, kAutoBurnIn);
  auto bad = j;
  bad["burn_in_sweeps"] = -5;
  EXPECT_THROW(bad.get<RunPlan>().validate({}), ConfigError);
}
