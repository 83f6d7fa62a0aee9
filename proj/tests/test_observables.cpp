#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "qcm/engine.hpp"
#include "qcm/exact.hpp"
#include "qcm/observables.hpp"

using namespace qcm;

namespace {

ObservableSeries run_chain(const ModelParams& p, std::int64_t n, int max_r, StartState start = StartState::random,
                           std::int64_t burn = 200, SweepOrder order = SweepOrder::typewriter) {
  Engine e(p, 17, 0, start, order);
  RunPlan plan;
  plan.burn_in_sweeps = burn;
  plan.n_samples = n;
  plan.measure_correlations = max_r >= 0;
  plan.max_r = std::max(0, max_r);
  return e.run(plan);
}

double slope(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sx += x[k];
    sy += y[k];
    sxx += x[k] * x[k];
    sxy += x[k] * y[k];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST(Susceptibility, FreeSpinsGiveOne) {
  const ModelParams p{0.0, std::numeric_limits<double>::infinity(), 0.0, 1.0, 16, 16};
  // typewriter order would flip every free spin deterministically
  const auto series = run_chain(p, 20000, 8, StartState::random, 200, SweepOrder::random_site);
  const auto chi = susceptibility(series);
  EXPECT_LT(std::abs(chi.mean - 1.0), 3.0 * chi.std_error);
  const auto table = equal_time_correlation(series);
  for (const auto& pt : table.points) {
    if (pt.r == 0) continue;
    EXPECT_LT(std::abs(pt.raw), 3.0 * pt.raw_err + 1e-12) << "r = " << pt.r;
    EXPECT_LT(std::abs(pt.mean), 0.01);
  }
}

TEST(Susceptibility, FrozenChainIsZero) {
  const ModelParams p{50.0, 5.0, 0.0, 1.0, 4, 8};
  const auto series = run_chain(p, 64, 2, StartState::ordered, 0);
  const auto chi = susceptibility(series);
  EXPECT_EQ(chi.mean, 0.0);
  EXPECT_EQ(chi.std_error, 0.0);
  const auto table = equal_time_correlation(series);
  for (const auto& pt : table.points) {
    EXPECT_EQ(pt.mean, 0.0);
    EXPECT_EQ(pt.err, 0.0);
  }
}

TEST(Susceptibility, MatchesExactEnumeration) {
  const ModelParams p{0.6, 1.0, 0.3, 1.0, 3, 4};
  const auto ex = enumerate(p);
  const auto series = run_chain(p, 100000, 1);
  const auto chi = susceptibility(series);
  EXPECT_LT(std::abs(chi.mean - ex.chi), 3.0 * chi.std_error);
  const auto table = equal_time_correlation(series);
  for (int r = 0; r <= 1; ++r)
    EXPECT_LT(std::abs(table.points[r].mean - ex.corr_connected[r]), 3.0 * table.points[r].err + 1e-12);
}

TEST(Correlation, NormalizationAtZeroDistance) {
  const ModelParams p{0.8, 1.0, 0.0, 1.0, 8, 8};
  const auto table = equal_time_correlation(run_chain(p, 2000, 4));
  EXPECT_NEAR(table.points[0].mean + table.m_abs_sq, 1.0, 1e-12);
  EXPECT_EQ(table.points[0].raw, 1.0);
}

TEST(Correlation, DistanceBeyondMeasuredIsUsageError) {
  const ModelParams p{0.8, 1.0, 0.0, 1.0, 8, 8};
  const auto series = run_chain(p, 100, 2);
  EXPECT_THROW(equal_time_correlation(series, 3), UsageError);
  EXPECT_NO_THROW(equal_time_correlation(series, 2));
  EXPECT_THROW(equal_time_correlation(run_chain(p, 100, -1)), UsageError);
  EXPECT_THROW(entanglement_proxy(series), UsageError);
}

TEST(Correlation, CsvHeader) {
  const ModelParams p{0.8, 1.0, 0.0, 1.0, 4, 4};
  std::ostringstream os;
  write_correlation_csv(os, equal_time_correlation(run_chain(p, 100, 2)));
  const auto text = os.str();
  EXPECT_EQ(text.substr(0, 9), "r,C,Cerr\n");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
}

TEST(EntanglementProxy, TrapezoidOfKnownProfiles) {
  // Constant C = 1 over r = 0..N/2 integrates to N/2, times 2.
  const std::vector<double> ones(9, 1.0);
  EXPECT_DOUBLE_EQ(entanglement_proxy(ones, 16), 16.0);
  EXPECT_THROW(entanglement_proxy(ones, 20), UsageError);

  // Power law r^-1/4 (C(0) = 1) grows as N^(3/4).
  std::vector<double> lx, ly;
  for (int e = 8; e <= 16; ++e) {
    const int n = 1 << e;
    std::vector<double> c(static_cast<std::size_t>(n / 2 + 1));
    c[0] = 1.0;
    for (std::size_t r = 1; r < c.size(); ++r) c[r] = std::pow(static_cast<double>(r), -0.25);
    lx.push_back(std::log(n));
    ly.push_back(std::log(entanglement_proxy(c, n)));
  }
  EXPECT_NEAR(slope(lx, ly), 0.75, 0.02);

  // 1/r gives 2 ln N plus a constant.
  auto inv = [](int n) {
    std::vector<double> c(static_cast<std::size_t>(n / 2 + 1));
    c[0] = 1.0;
    for (std::size_t r = 1; r < c.size(); ++r) c[r] = 1.0 / static_cast<double>(r);
    return entanglement_proxy(c, n);
  };
  EXPECT_NEAR(inv(1 << 14) - inv(1 << 13), 2.0 * std::log(2.0), 1e-6);
}

TEST(EntanglementProxy, SeriesEstimateMatchesPointwise) {
  const ModelParams p{0.9, 1.0, 0.0, 1.0, 8, 16};
  const auto series = run_chain(p, 4000, 4);
  const auto ne = entanglement_proxy(series);
  const auto table = equal_time_correlation(series);
  EXPECT_NEAR(ne.mean, entanglement_proxy(table.means(), 8), 1e-12);
  EXPECT_GT(ne.std_error, 0.0);
}

TEST(Qfi, ShortTimeFormula) {
  EXPECT_DOUBLE_EQ(qfi_estimate(2.5, 10, 0.5), 25.0);
  EXPECT_DOUBLE_EQ(qfi_estimate(1.0, 1, 1.0), 4.0);
  EXPECT_THROW(qfi_estimate(1.0, 4, 0.0), DomainError);
  EXPECT_THROW(qfi_estimate(1.0, 4, -1.0), DomainError);
}

TEST(Summary, RecordFields) {
  const ModelParams p{0.9, 1.0, 0.1, 1.0, 4, 8};
  const auto series = run_chain(p, 200, 2);
  const auto rec = summary_record(series, summarize(series));
  for (const char* k : {"params", "plan", "chi", "C", "Ne", "F_per_t2", "version", "master_seed"})
    EXPECT_TRUE(rec.contains(k)) << k;
  EXPECT_EQ(rec["C"].size(), 3u);
  EXPECT_NEAR(rec["F_per_t2"].get<double>(), 16.0 * rec["Ne"]["mean"].get<double>(), 1e-12);
}
