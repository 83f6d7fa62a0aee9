/**
 * @file model.hpp
 * @brief Lattice problem for the dissipative transverse-field Ising chain.
 *
 * The quantum chain (N sites, transverse field B, Ising coupling J, local
 * bosonic baths of strength alpha and spectral exponent s) is mapped to a
 * classical Nx x Ntau lattice of +-1 spins with action
 *
 *   S = - sum_i [ sum_tau ( J s(i,tau) s(i+1,tau) + Gamma s(i,tau) s(i,tau+1) )
 *                 + sum_{tau<tau'} k(tau'-tau) s(i,tau) s(i,tau') ]
 *
 * periodic in both directions, with Gamma = -ln(tanh B)/2 and the bath kernel
 * k(d) = (alpha/2) (pi / (Ntau sin(pi d / Ntau)))^(1+s).
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "qcm/error.hpp"

namespace qcm {

/// Imaginary-time coupling of the classical model for transverse field B.
///
/// Evaluated as atanh(exp(-2B)), which equals -ln(tanh B)/2 but keeps full
/// precision for large B. The map is an involution: gamma_from_field(Gamma)
/// returns B again, because sinh(2 Gamma) sinh(2 B) = 1.
inline double gamma_from_field(double B) {
  if (!(B > 0.0)) {
    throw DomainError("gamma_from_field: transverse field must be > 0, got " +
                      std::to_string(B));
  }
  return std::atanh(std::exp(-2.0 * B));
}

/// Inverse of gamma_from_field (the same function, by duality).
inline double field_from_gamma(double gamma) { return gamma_from_field(gamma); }

/// Coupling J at which the clean chain is critical for a given field B.
/// The self-dual line sinh(2J) sinh(2 Gamma) = 1 gives J_C = B.
inline double critical_coupling(double B) { return B; }

struct ModelParams {
  double J = 1.0;
  double B = 1.0;
  double alpha = 0.0;
  double s = 1.0;
  int Nx = 2;
  int Ntau = 2;

  /// Throws DomainError if any field is out of range.
  void validate() const {
    if (!std::isfinite(J)) throw DomainError("ModelParams: J must be finite");
    if (!(B > 0.0)) throw DomainError("ModelParams: B must be > 0");
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
      throw DomainError("ModelParams: alpha must be finite and >= 0");
    if (!(s > 0.0) || !std::isfinite(s))
      throw DomainError("ModelParams: s must be finite and > 0");
    if (Nx < 2) throw DomainError("ModelParams: Nx must be >= 2");
    if (Ntau < 2) throw DomainError("ModelParams: Ntau must be >= 2");
  }

  double gamma() const { return gamma_from_field(B); }
  std::int64_t n_spins() const { return std::int64_t{Nx} * Ntau; }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Gamma is never serialized; it is always recomputed from B.
inline void to_json(nlohmann::json& j, const ModelParams& p) {
  j = nlohmann::json{{"J", p.J},         {"B", p.B},   {"alpha", p.alpha},
                     {"s", p.s},         {"Nx", p.Nx}, {"Ntau", p.Ntau}};
}

inline void from_json(const nlohmann::json& j, ModelParams& p) {
  try {
    p.J = j.at("J").get<double>();
    p.B = j.at("B").get<double>();
    p.alpha = j.at("alpha").get<double>();
    p.s = j.at("s").get<double>();
    p.Nx = j.at("Nx").get<int>();
    p.Ntau = j.at("Ntau").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("ModelParams: ") + e.what());
  }
  p.validate();
}

/// Nx x Ntau array of +-1 spins. Storage is row-major over (i, tau): each
/// site's imaginary-time column is contiguous.
class SpinLattice {
 public:
  SpinLattice(int Nx, int Ntau, std::int8_t fill = 1) : nx_(Nx), ntau_(Ntau) {
    if (Nx < 1 || Ntau < 1) throw UsageError("SpinLattice: empty dimensions");
    if (fill != 1 && fill != -1) throw UsageError("SpinLattice: fill must be +-1");
    spins_.assign(static_cast<std::size_t>(Nx) * Ntau, fill);
  }

  SpinLattice(int Nx, int Ntau, std::vector<std::int8_t> spins)
      : nx_(Nx), ntau_(Ntau), spins_(std::move(spins)) {
    if (spins_.size() != static_cast<std::size_t>(Nx) * Ntau)
      throw UsageError("SpinLattice: spin count does not match dimensions");
    for (auto v : spins_)
      if (v != 1 && v != -1) throw UsageError("SpinLattice: entries must be +-1");
  }

  /// Configuration whose bit k (row-major index) set means spin -1.
  static SpinLattice from_bits(int Nx, int Ntau, std::uint64_t bits) {
    SpinLattice lat(Nx, Ntau);
    for (std::size_t k = 0; k < lat.spins_.size(); ++k)
      lat.spins_[k] = ((bits >> k) & 1U) ? std::int8_t{-1} : std::int8_t{1};
    return lat;
  }

  std::uint64_t to_bits() const {
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k < spins_.size() && k < 64; ++k)
      if (spins_[k] < 0) bits |= std::uint64_t{1} << k;
    return bits;
  }

  int nx() const { return nx_; }
  int ntau() const { return ntau_; }
  std::size_t size() const { return spins_.size(); }

  std::size_t index(int i, int tau) const {
    return static_cast<std::size_t>(wrap(i, nx_)) * ntau_ + wrap(tau, ntau_);
  }

  /// Periodic access; any integer indices are accepted.
  int operator()(int i, int tau) const { return spins_[index(i, tau)]; }

  void flip(int i, int tau) {
    auto& v = spins_[index(i, tau)];
    v = static_cast<std::int8_t>(-v);
  }

  void flip_all() {
    for (auto& v : spins_) v = static_cast<std::int8_t>(-v);
  }

  std::span<const std::int8_t> column(int i) const {
    return {spins_.data() + static_cast<std::size_t>(wrap(i, nx_)) * ntau_,
            static_cast<std::size_t>(ntau_)};
  }

  std::span<const std::int8_t> data() const { return spins_; }
  std::span<std::int8_t> mutable_data() { return spins_; }

  std::int64_t total() const {
    std::int64_t m = 0;
    for (auto v : spins_) m += v;
    return m;
  }

  friend bool operator==(const SpinLattice&, const SpinLattice&) = default;

 private:
  static int wrap(int a, int n) {
    int r = a % n;
    return r < 0 ? r + n : r;
  }

  int nx_;
  int ntau_;
  std::vector<std::int8_t> spins_;
};

/// Long-range imaginary-time couplings k[d], d = 0..Ntau-1, with k[0] = 0.
class KernelTable {
 public:
  KernelTable() = default;

  explicit KernelTable(std::vector<double> k) : k_(std::move(k)) {
    if (k_.size() < 2) throw UsageError("KernelTable: need Ntau >= 2 entries");
    const auto n = k_.size();
    // wrapped_[n + x] = k[x mod n] for x in [-n, n)
    wrapped_.resize(2 * n);
    for (std::size_t x = 0; x < 2 * n; ++x) wrapped_[x] = k_[x % n];
    zero_ = true;
    for (double v : k_)
      if (v != 0.0) zero_ = false;
  }

  int ntau() const { return static_cast<int>(k_.size()); }
  double operator[](std::size_t d) const { return k_[d]; }
  std::span<const double> values() const { return k_; }
  bool all_zero() const { return zero_; }

  /// Sum over tau' of k[(tau' - tau) mod Ntau] * column[tau'].
  double field(std::span<const std::int8_t> column, int tau) const {
    const std::size_t n = k_.size();
    const double* w = wrapped_.data() + (n - static_cast<std::size_t>(tau));
    double acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) acc += w[t] * static_cast<double>(column[t]);
    return acc;
  }

 private:
  std::vector<double> k_;
  std::vector<double> wrapped_;
  bool zero_ = true;
};

/// Kernel k[d] = (alpha/2) (pi / (Ntau sin(pi d/Ntau)))^(1+s). At s = 1 this is
/// the Ohmic (alpha/2)(pi/Ntau)^2 / sin^2(pi d/Ntau).
inline KernelTable build_kernel(double alpha, double s, int Ntau) {
  if (!(alpha >= 0.0)) throw DomainError("build_kernel: alpha must be >= 0");
  if (!(s > 0.0)) throw DomainError("build_kernel: s must be > 0");
  if (Ntau < 2) throw DomainError("build_kernel: Ntau must be >= 2");
  std::vector<double> k(static_cast<std::size_t>(Ntau), 0.0);
  if (alpha == 0.0) return KernelTable(std::move(k));
  const double pi = std::numbers::pi;
  // Fill the first half and mirror so k[d] == k[Ntau-d] bit for bit.
  for (int d = 1; d <= Ntau / 2; ++d) {
    const double ratio = (pi / Ntau) / std::sin(pi * d / Ntau);
    const double v = 0.5 * alpha * (s == 1.0 ? ratio * ratio : std::pow(ratio, 1.0 + s));
    k[static_cast<std::size_t>(d)] = v;
    k[static_cast<std::size_t>(Ntau - d)] = v;
  }
  return KernelTable(std::move(k));
}

inline KernelTable build_kernel(const ModelParams& p) { return build_kernel(p.alpha, p.s, p.Ntau); }

/// Effective action S, summed literally over all sites and slices with
/// periodic neighbours (a direction of length 2 therefore counts each bond
/// twice). Boltzmann weight is exp(-S).
inline double action(const SpinLattice& lat, const ModelParams& p, const KernelTable& kernel) {
  if (lat.nx() != p.Nx || lat.ntau() != p.Ntau || kernel.ntau() != p.Ntau)
    throw UsageError("action: lattice/kernel dimensions do not match params");
  const double gamma = p.gamma();
  double local = 0.0;
  double longrange = 0.0;
  for (int i = 0; i < p.Nx; ++i) {
    const auto col = lat.column(i);
    const auto next = lat.column(i + 1);
    for (int t = 0; t < p.Ntau; ++t) {
      const int st = col[static_cast<std::size_t>(t)];
      local += p.J * st * next[static_cast<std::size_t>(t)] +
               gamma * st * col[static_cast<std::size_t>((t + 1) % p.Ntau)];
    }
    if (kernel.all_zero()) continue;
    for (int t = 0; t < p.Ntau; ++t)
      for (int u = t + 1; u < p.Ntau; ++u)
        longrange += kernel[static_cast<std::size_t>(u - t)] * col[static_cast<std::size_t>(t)] *
                     col[static_cast<std::size_t>(u)];
  }
  return -(local + longrange);
}

}  // namespace qcm
