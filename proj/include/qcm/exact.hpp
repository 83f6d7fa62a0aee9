/**
 * @file exact.hpp
 * @brief Brute-force partition function for lattices of at most 20 spins.
 *
 * Configurations are visited in Gray-code order so that consecutive states
 * differ by one spin; the action, the magnetization and the equal-time
 * correlation sums are all updated incrementally. The action is resynced
 * against a full evaluation every 4096 steps.
 */
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "qcm/error.hpp"
#include "qcm/model.hpp"

namespace qcm {

inline constexpr int kMaxExactSpins = 20;

struct ExactResult {
  ModelParams params;
  double logZ = 0.0;
  double mean_sum = 0.0;      ///< <sum s>
  double mean_sum_sq = 0.0;   ///< <(sum s)^2>
  double mean_abs_sum = 0.0;  ///< <|sum s|>
  double chi = 0.0;           ///< (<(sum s)^2> - <sum s>^2) / (Nx Ntau)
  /// <(1/(Nx Ntau)) sum_{i,tau} s(i,tau) s(i+r,tau)>, r = 0..Nx/2
  std::vector<double> corr_raw;
  /// corr_raw[r] - <|M|>^2 with M = sum s / (Nx Ntau)
  std::vector<double> corr_connected;

  /// Flat name -> value view used for fixtures.
  std::map<std::string, double> expectations() const {
    std::map<std::string, double> out{{"sum_s", mean_sum},
                                      {"sum_s_sq", mean_sum_sq},
                                      {"abs_sum_s", mean_abs_sum},
                                      {"chi", chi}};
    for (std::size_t r = 0; r < corr_connected.size(); ++r)
      out["C" + std::to_string(r)] = corr_connected[r];
    return out;
  }
};

inline void to_json(nlohmann::json& j, const ExactResult& e) {
  j = nlohmann::json{{"params", e.params},
                     {"logZ", e.logZ},
                     {"expectations", e.expectations()},
                     {"C_raw", e.corr_raw},
                     {"C", e.corr_connected}};
}

namespace detail {

/// Neumaier compensated accumulator.
struct KahanSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      comp += (sum - t) + x;
    else
      comp += (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + comp; }
};

/// Calls visit(lattice, S, sum_s, corr_sums) for all 2^n configurations.
template <class Visit>
void for_each_configuration(const ModelParams& p, const KernelTable& kernel, Visit&& visit) {
  const int n = static_cast<int>(p.n_spins());
  const int n_r = p.Nx / 2 + 1;
  const double gamma = p.gamma();
  SpinLattice lat(p.Nx, p.Ntau, std::int8_t{1});
  double S = action(lat, p, kernel);
  std::int64_t m = n;
  std::vector<std::int64_t> corr(static_cast<std::size_t>(n_r), n);
  visit(lat, S, m, corr);
  const std::uint64_t total = std::uint64_t{1} << n;
  for (std::uint64_t k = 1; k < total; ++k) {
    const int bit = std::countr_zero(k);
    const int i = bit / p.Ntau;
    const int t = bit % p.Ntau;
    const int s = lat(i, t);
    double h = p.J * (lat(i - 1, t) + lat(i + 1, t)) + gamma * (lat(i, t - 1) + lat(i, t + 1));
    if (!kernel.all_zero()) h += kernel.field(lat.column(i), t);
    S += 2.0 * s * h;
    for (int r = 1; r < n_r; ++r)
      corr[static_cast<std::size_t>(r)] -= 2 * s * (lat(i + r, t) + lat(i - r, t));
    lat.flip(i, t);
    m -= 2 * s;
    if ((k & 4095U) == 0) S = action(lat, p, kernel);
    visit(lat, S, m, corr);
  }
}

}  // namespace detail

/// Exact logZ and expectations by summing exp(-S) over every configuration.
inline ExactResult enumerate(const ModelParams& p, const KernelTable& kernel) {
  p.validate();
  if (p.n_spins() > kMaxExactSpins)
    throw UsageError("enumerate: lattice has " + std::to_string(p.n_spins()) +
                     " spins, limit is " + std::to_string(kMaxExactSpins));
  if (kernel.ntau() != p.Ntau) throw UsageError("enumerate: kernel length != Ntau");

  double s_min = INFINITY;
  detail::for_each_configuration(p, kernel, [&](const SpinLattice&, double S, std::int64_t,
                                                const std::vector<std::int64_t>&) {
    if (S < s_min) s_min = S;
  });

  const int n_r = p.Nx / 2 + 1;
  const double v = static_cast<double>(p.n_spins());
  detail::KahanSum z, m1, m2, mabs, mabs_density;
  std::vector<detail::KahanSum> corr(static_cast<std::size_t>(n_r));
  detail::for_each_configuration(
      p, kernel,
      [&](const SpinLattice&, double S, std::int64_t m, const std::vector<std::int64_t>& c) {
        const double w = std::exp(-(S - s_min));
        const double md = static_cast<double>(m);
        z.add(w);
        m1.add(w * md);
        m2.add(w * md * md);
        mabs.add(w * std::abs(md));
        for (int r = 0; r < n_r; ++r)
          corr[static_cast<std::size_t>(r)].add(w * static_cast<double>(c[static_cast<std::size_t>(r)]) / v);
      });

  ExactResult out;
  out.params = p;
  const double zv = z.value();
  out.logZ = std::log(zv) - s_min;
  out.mean_sum = m1.value() / zv;
  out.mean_sum_sq = m2.value() / zv;
  out.mean_abs_sum = mabs.value() / zv;
  out.chi = (out.mean_sum_sq - out.mean_sum * out.mean_sum) / v;
  const double m_abs = out.mean_abs_sum / v;
  for (int r = 0; r < n_r; ++r) {
    out.corr_raw.push_back(corr[static_cast<std::size_t>(r)].value() / zv);
    out.corr_connected.push_back(out.corr_raw.back() - m_abs * m_abs);
  }
  return out;
}

inline ExactResult enumerate(const ModelParams& p) { return enumerate(p, build_kernel(p)); }

/// Probability of every configuration, indexed by SpinLattice::to_bits().
inline std::vector<double> exact_distribution(const ModelParams& p) {
  p.validate();
  if (p.n_spins() > kMaxExactSpins) throw UsageError("exact_distribution: lattice too large");
  const auto kernel = build_kernel(p);
  const std::uint64_t total = std::uint64_t{1} << p.n_spins();
  std::vector<double> logw(total);
  double s_min = INFINITY;
  for (std::uint64_t b = 0; b < total; ++b) {
    logw[b] = action(SpinLattice::from_bits(p.Nx, p.Ntau, b), p, kernel);
    s_min = std::min(s_min, logw[b]);
  }
  detail::KahanSum z;
  for (auto& x : logw) {
    x = std::exp(-(x - s_min));
    z.add(x);
  }
  for (auto& x : logw) x /= z.value();
  return logw;
}

}  // namespace qcm
