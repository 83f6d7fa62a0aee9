/**
 * @file observables.hpp
 * @brief Physical estimators built from an ObservableSeries.
 *
 * Errors come from a delete-one-bin jackknife, with the bin length taken
 * from the blocking analysis of the (sum s)^2 and |sum s| streams so that
 * bins are longer than the autocorrelation time.
 *
 * The connected equal-time correlation subtracts <|M|>^2 rather than <M>^2:
 * at zero field a finite chain tunnels between the two ordered states and
 * <M> averages to zero even when the spins are ordered.
 */
#pragma once

#include <cmath>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "qcm/error.hpp"
#include "qcm/series.hpp"
#include "qcm/stats.hpp"

namespace qcm {

struct CorrelationPoint {
  int r = 0;
  double mean = 0.0;      ///< connected C(r)
  double err = 0.0;
  double raw = 0.0;       ///< unsubtracted <s s>
  double raw_err = 0.0;
};

struct CorrelationTable {
  std::vector<CorrelationPoint> points;
  double m_abs_sq = 0.0;  ///< subtracted <|M|>^2
  std::size_t n_bins = 0;

  std::vector<double> means() const {
    std::vector<double> out;
    for (const auto& p : points) out.push_back(p.mean);
    return out;
  }
};

namespace detail {

inline void require_samples(const ObservableSeries& series, const char* who) {
  if (series.size() < kMinSeriesLength)
    throw UsageError(std::string(who) + ": need at least 16 samples, got " +
                     std::to_string(series.size()));
}

/// Common jackknife bin length for a series.
inline std::size_t jackknife_bin_size(const ObservableSeries& series) {
  const auto sq = binned_error(series.sum_sq_as_double());
  const auto ab = binned_error(series.magnetization_abs_density());
  return std::max(sq.bin_size, ab.bin_size);
}

inline std::vector<double> corr_column(const ObservableSeries& series, int r) {
  std::vector<double> out(series.size());
  for (std::size_t k = 0; k < series.size(); ++k)
    out[k] = series.corr[k * static_cast<std::size_t>(series.n_r) + static_cast<std::size_t>(r)];
  return out;
}

}  // namespace detail

/// chi = (<(sum s)^2> - <sum s>^2) / (Nx Ntau), jackknife error.
/// tau_int is that of the (sum s)^2 stream.
inline ErrorEstimate susceptibility(const ObservableSeries& series) {
  detail::require_samples(series, "susceptibility");
  const double v = static_cast<double>(series.meta.params.n_spins());
  const std::vector<double> m(series.sum_s.begin(), series.sum_s.end());
  const auto m2 = series.sum_sq_as_double();
  const auto blocking = binned_error(m2);
  if (blocking.degenerate) {
    ErrorEstimate out = blocking;
    const double mean_m = detail::mean_of(m);
    out.mean = (blocking.mean - mean_m * mean_m) / v;
    out.std_error = 0.0;
    return out;
  }
  const std::size_t bin = detail::jackknife_bin_size(series);
  const BinnedStream bm(m, bin), bm2(m2, bin);
  const auto [chi, err] = jackknife(bm.n_bins(), [&](std::size_t j) {
    const double a = bm.mean_without(j);
    return (bm2.mean_without(j) - a * a) / v;
  });
  ErrorEstimate out;
  out.mean = chi;
  out.std_error = err;
  out.tau_int = blocking.tau_int;
  out.n_bins = bm.n_bins();
  out.bin_size = bin;
  out.plateau = blocking.plateau;
  return out;
}

/// Connected C(r) = <s(i,tau) s(i+r,tau)> - <|M|>^2 for r = 0..r_max, averaged
/// over all sites and all slices. r_max < 0 means the measured maximum.
inline CorrelationTable equal_time_correlation(const ObservableSeries& series, int r_max = -1) {
  if (!series.has_correlations())
    throw UsageError("equal_time_correlation: correlations were not measured in this run");
  detail::require_samples(series, "equal_time_correlation");
  const int measured = series.n_r - 1;
  if (r_max < 0) r_max = measured;
  if (r_max > measured)
    throw UsageError("equal_time_correlation: r = " + std::to_string(r_max) +
                     " exceeds measured max_r = " + std::to_string(measured));

  const std::size_t bin = detail::jackknife_bin_size(series);
  const BinnedStream babs(series.magnetization_abs_density(), bin);
  CorrelationTable table;
  table.n_bins = babs.n_bins();
  {
    const double a = babs.mean_without(babs.n_bins());
    table.m_abs_sq = a * a;
  }
  for (int r = 0; r <= r_max; ++r) {
    const BinnedStream bc(detail::corr_column(series, r), bin);
    CorrelationPoint pt;
    pt.r = r;
    std::tie(pt.mean, pt.err) = jackknife(bc.n_bins(), [&](std::size_t j) {
      const double a = babs.mean_without(j);
      return bc.mean_without(j) - a * a;
    });
    std::tie(pt.raw, pt.raw_err) =
        jackknife(bc.n_bins(), [&](std::size_t j) { return bc.mean_without(j); });
    table.points.push_back(pt);
  }
  return table;
}

/// N_e from C(r) on r = 0..Nx/2: twice the unit-step trapezoid rule, the
/// factor two covering the mirror images r -> Nx - r of the periodic chain.
inline double entanglement_proxy(std::span<const double> C, int Nx) {
  const auto half = static_cast<std::size_t>(Nx / 2);
  if (Nx < 2 || C.size() < half + 1)
    throw UsageError("entanglement_proxy: C must cover r = 0..Nx/2");
  double acc = 0.5 * (C[0] + C[half]);
  for (std::size_t r = 1; r < half; ++r) acc += C[r];
  return 2.0 * acc;
}

/// N_e with a jackknife error; needs correlations measured up to Nx/2.
inline ErrorEstimate entanglement_proxy(const ObservableSeries& series) {
  const int nx = series.meta.params.Nx;
  if (!series.has_correlations() || series.n_r - 1 < nx / 2)
    throw UsageError("entanglement_proxy: correlations up to r = Nx/2 are required");
  detail::require_samples(series, "entanglement_proxy");
  const std::size_t bin = detail::jackknife_bin_size(series);
  const BinnedStream babs(series.magnetization_abs_density(), bin);
  std::vector<BinnedStream> cols;
  for (int r = 0; r <= nx / 2; ++r) cols.emplace_back(detail::corr_column(series, r), bin);
  std::vector<double> c(cols.size());
  const auto [ne, err] = jackknife(babs.n_bins(), [&](std::size_t j) {
    const double a = babs.mean_without(j);
    for (std::size_t r = 0; r < cols.size(); ++r) c[r] = cols[r].mean_without(j) - a * a;
    return entanglement_proxy(c, nx);
  });
  ErrorEstimate out;
  out.mean = ne;
  out.std_error = err;
  out.n_bins = babs.n_bins();
  out.bin_size = bin;
  return out;
}

/// Short-time quantum Fisher information F = 4 N t^2 N_e.
inline double qfi_estimate(double Ne, int Nx, double t) {
  if (!(t > 0.0)) throw DomainError("qfi_estimate: evolution time must be > 0");
  return 4.0 * static_cast<double>(Nx) * t * t * Ne;
}

/// Everything reported for one chain.
struct RunSummary {
  ErrorEstimate chi;
  CorrelationTable C;
  ErrorEstimate Ne;
  bool has_corr = false;
  bool has_ne = false;
};

inline RunSummary summarize(const ObservableSeries& series) {
  RunSummary out;
  out.chi = susceptibility(series);
  if (series.has_correlations()) {
    out.C = equal_time_correlation(series);
    out.has_corr = true;
    if (series.n_r - 1 >= series.meta.params.Nx / 2) {
      out.Ne = entanglement_proxy(series);
      out.has_ne = true;
    }
  }
  return out;
}

inline nlohmann::json error_json(const ErrorEstimate& e) {
  return {{"mean", e.mean}, {"err", e.std_error}, {"tau_int", e.tau_int}};
}

/// One JSON-lines record: {params, plan, chi, C, Ne, F_per_t2} plus provenance.
inline nlohmann::json summary_record(const ObservableSeries& series, const RunSummary& s) {
  nlohmann::json j;
  j["params"] = series.meta.params;
  j["plan"] = series.meta.plan;
  j["master_seed"] = series.meta.master_seed;
  j["chain_index"] = series.meta.chain_index;
  j["version"] = kVersion;
  j["chi"] = error_json(s.chi);
  j["C"] = nlohmann::json::array();
  for (const auto& p : s.C.points) j["C"].push_back({p.r, p.mean, p.err});
  if (s.has_ne) {
    j["Ne"] = {{"mean", s.Ne.mean}, {"err", s.Ne.std_error}};
    j["F_per_t2"] = qfi_estimate(s.Ne.mean, series.meta.params.Nx, 1.0);
  } else {
    j["Ne"] = nullptr;
    j["F_per_t2"] = nullptr;
  }
  return j;
}

inline void write_correlation_csv(std::ostream& os, const CorrelationTable& table) {
  os << "r,C,Cerr\n";
  os.precision(17);
  for (const auto& p : table.points) os << p.r << ',' << p.mean << ',' << p.err << '\n';
}

}  // namespace qcm
