/**
 * @file stats.hpp
 * @brief Error analysis for correlated Markov-chain time series.
 *
 * binned_error() runs the usual bin-doubling (blocking) analysis: the naive
 * standard error of bin means is recomputed while the bin length doubles,
 * and the value at the largest bin length that still leaves enough bins is
 * reported. The integrated autocorrelation time follows from
 * err^2 = 2 tau_int var / n.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "qcm/error.hpp"

namespace qcm {

inline constexpr std::size_t kMinSeriesLength = 16;

struct ErrorEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  double tau_int = 0.5;       ///< in measurement units
  std::size_t n_bins = 0;     ///< bins used for the reported error
  std::size_t bin_size = 1;   ///< measurements per bin
  bool plateau = true;        ///< false if the error still grows at the largest bin size
  bool degenerate = false;    ///< zero variance input
};

namespace detail {

inline double mean_of(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v;
  return acc / static_cast<double>(x.size());
}

/// Standard error of the mean treating entries as independent.
inline double naive_error(std::span<const double> x) {
  const double m = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  const auto n = static_cast<double>(x.size());
  return std::sqrt(ss / (n * (n - 1.0)));
}

}  // namespace detail

/// Minimum number of bins kept by the blocking analysis for a series of n.
inline std::size_t min_bins_for(std::size_t n) {
  return std::clamp<std::size_t>(n / 64, kMinSeriesLength, 128);
}

inline ErrorEstimate binned_error(std::span<const double> x) {
  if (x.size() < kMinSeriesLength)
    throw UsageError("binned_error: need at least 16 samples, got " + std::to_string(x.size()));
  ErrorEstimate out;
  out.mean = detail::mean_of(x);
  const double naive = detail::naive_error(x);
  if (!(naive > 0.0)) {
    out.std_error = 0.0;
    out.tau_int = 0.5;
    out.n_bins = x.size();
    out.degenerate = true;
    out.plateau = true;
    return out;
  }

  const std::size_t min_bins = min_bins_for(x.size());
  std::vector<double> level(x.begin(), x.end());
  std::vector<double> errors{naive};
  std::vector<std::size_t> sizes{1};
  std::size_t bin = 1;
  while (level.size() / 2 >= min_bins) {
    std::vector<double> next(level.size() / 2);
    for (std::size_t k = 0; k < next.size(); ++k) next[k] = 0.5 * (level[2 * k] + level[2 * k + 1]);
    level = std::move(next);
    bin *= 2;
    errors.push_back(detail::naive_error(level));
    sizes.push_back(bin);
  }

  out.std_error = errors.back();
  out.bin_size = sizes.back();
  out.n_bins = x.size() / out.bin_size;
  out.tau_int = std::max(0.5, 0.5 * (out.std_error * out.std_error) / (naive * naive));
  if (errors.size() >= 3) {
    // Relative statistical uncertainty of an error estimate from n bins.
    const double rel = 1.0 / std::sqrt(2.0 * (static_cast<double>(out.n_bins) - 1.0));
    const double prev = errors[errors.size() - 2];
    out.plateau = (out.std_error - prev) / out.std_error < 3.0 * rel;
  } else {
    out.plateau = false;
  }
  return out;
}

/// Means of consecutive bins of length bin_size (a trailing partial bin is dropped).
inline std::vector<double> bin_means(std::span<const double> x, std::size_t bin_size) {
  const std::size_t n = x.size() / bin_size;
  std::vector<double> out(n, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < bin_size; ++k) acc += x[b * bin_size + k];
    out[b] = acc / static_cast<double>(bin_size);
  }
  return out;
}

/// Delete-one-bin jackknife of an arbitrary estimator.
///
/// `estimator(j)` must return the estimate computed with bin j removed, or
/// with all bins when j == n_bins. Returns {full estimate, jackknife error}.
inline std::pair<double, double> jackknife(std::size_t n_bins,
                                           const std::function<double(std::size_t)>& estimator) {
  if (n_bins < 2) throw UsageError("jackknife: need at least 2 bins");
  const double full = estimator(n_bins);
  std::vector<double> loo(n_bins);
  double mean_loo = 0.0;
  for (std::size_t j = 0; j < n_bins; ++j) {
    loo[j] = estimator(j);
    mean_loo += loo[j];
  }
  mean_loo /= static_cast<double>(n_bins);
  double ss = 0.0;
  for (double v : loo) ss += (v - mean_loo) * (v - mean_loo);
  const auto n = static_cast<double>(n_bins);
  return {full, std::sqrt((n - 1.0) / n * ss)};
}

/// Sums of bin means with leave-one-out access, the building block of the
/// jackknife estimators over several streams.
class BinnedStream {
 public:
  BinnedStream(std::span<const double> x, std::size_t bin_size) : bins_(bin_means(x, bin_size)) {
    for (double v : bins_) total_ += v;
  }

  std::size_t n_bins() const { return bins_.size(); }

  /// Mean over all bins except `skip` (skip >= n_bins keeps every bin).
  double mean_without(std::size_t skip) const {
    if (skip >= bins_.size()) return total_ / static_cast<double>(bins_.size());
    return (total_ - bins_[skip]) / static_cast<double>(bins_.size() - 1);
  }

 private:
  std::vector<double> bins_;
  double total_ = 0.0;
};

}  // namespace qcm
