/**
 * @file engine.hpp
 * @brief Single-spin Metropolis sampling of exp(-S)/Z for the lattice model.
 *
 * One Engine is one Markov chain. The entire trajectory is a function of
 * (params, master_seed, chain_index, start, order): the generator is seeded
 * from derive_stream_seed(master_seed, chain_index) and every random draw
 * happens in a fixed sequence. A checkpoint stores the full generator state,
 * so a restored engine continues bit-for-bit.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qcm/error.hpp"
#include "qcm/model.hpp"
#include "qcm/rng.hpp"
#include "qcm/serial.hpp"
#include "qcm/series.hpp"
#include "qcm/stats.hpp"

namespace qcm {

enum class StartState : std::uint8_t { random = 0, ordered = 1 };

/// Proposal order inside a sweep. Typewriter visits (i, tau) row-major;
/// random_site draws Nx*Ntau sites uniformly with replacement.
enum class SweepOrder : std::uint8_t { typewriter = 0, random_site = 1 };

class Engine;

std::int64_t auto_burn_in(const ModelParams& p, std::uint64_t master_seed, std::uint64_t chain_index,
                          SweepOrder order = SweepOrder::typewriter);

class Engine {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;
  static constexpr std::string_view kMagic = "QCMCHAIN";

  Engine(const ModelParams& params, std::uint64_t master_seed, std::uint64_t chain_index,
         StartState start = StartState::random, SweepOrder order = SweepOrder::typewriter)
      : params_(validated(params)),
        gamma_(params.gamma()),
        kernel_(build_kernel(params)),
        lattice_(params.Nx, params.Ntau),
        rng_(derive_stream_seed(master_seed, chain_index)),
        master_seed_(master_seed),
        chain_index_(chain_index),
        order_(order) {
    if (start == StartState::random) {
      for (auto& v : lattice_.mutable_data()) v = (rng_() >> 63) ? std::int8_t{-1} : std::int8_t{1};
    }
    build_tables();
    rebuild_field_cache();
  }

  const ModelParams& params() const { return params_; }
  const KernelTable& kernel() const { return kernel_; }
  const SpinLattice& lattice() const { return lattice_; }
  const Xoshiro256& rng() const { return rng_; }
  std::int64_t sweeps_done() const { return sweeps_done_; }
  std::uint64_t master_seed() const { return master_seed_; }
  std::uint64_t chain_index() const { return chain_index_; }
  SweepOrder order() const { return order_; }
  std::uint64_t accepted() const { return accepted_; }
  std::uint64_t proposed() const { return proposed_; }

  void set_lattice(SpinLattice lat) {
    if (lat.nx() != params_.Nx || lat.ntau() != params_.Ntau)
      throw UsageError("set_lattice: dimensions do not match params");
    lattice_ = std::move(lat);
    rebuild_field_cache();
  }

  /// Change in action if spin (i, tau) were flipped. O(Ntau).
  double delta_action_flip(int i, int tau) const {
    if (i < 0 || i >= params_.Nx || tau < 0 || tau >= params_.Ntau)
      throw UsageError("delta_action_flip: index out of range");
    return delta_action(i, tau);
  }

  /// Nx*Ntau Metropolis proposals, each accepted with min(1, exp(-dS)).
  void sweep() {
    if (order_ == SweepOrder::typewriter) {
      for (int i = 0; i < params_.Nx; ++i)
        for (int t = 0; t < params_.Ntau; ++t) propose(i, t);
    } else {
      const auto n = static_cast<std::uint64_t>(params_.n_spins());
      for (std::uint64_t k = 0; k < n; ++k) {
        const auto site = rng_.below(n);
        propose(static_cast<int>(site / static_cast<std::uint64_t>(params_.Ntau)),
                static_cast<int>(site % static_cast<std::uint64_t>(params_.Ntau)));
      }
    }
    ++sweeps_done_;
  }

  void equilibrate(std::int64_t burn_in_sweeps) {
    for (std::int64_t k = 0; k < burn_in_sweeps; ++k) sweep();
  }

  /// Records plan.n_samples measurements, one every plan.thinning sweeps.
  /// Burn-in is not performed here; see run().
  ObservableSeries sample_run(const RunPlan& plan) {
    check_plan(plan);
    ObservableSeries series = empty_series(plan);
    sample_into(series, plan, plan.n_samples);
    return series;
  }

  /// equilibrate(plan.burn_in_sweeps) followed by sample_run(plan).
  ObservableSeries run(const RunPlan& plan) {
    check_plan(plan);
    if (plan.burn_in_sweeps == kAutoBurnIn) {
      RunPlan resolved = plan;
      resolved.burn_in_sweeps = auto_burn_in(params_, master_seed_, chain_index_, order_);
      equilibrate(resolved.burn_in_sweeps);
      return sample_run(resolved);
    }
    equilibrate(plan.burn_in_sweeps);
    return sample_run(plan);
  }

  ObservableSeries empty_series(const RunPlan& plan) const {
    ObservableSeries series;
    series.meta = SeriesMeta{params_, plan, master_seed_, chain_index_, sweeps_done_, plan.thinning};
    series.n_r = plan.measure_correlations ? plan.max_r + 1 : 0;
    return series;
  }

  /// Appends up to `count` further samples to an existing series.
  void sample_into(ObservableSeries& series, const RunPlan& plan, std::int64_t count) {
    std::vector<double> corr(static_cast<std::size_t>(series.n_r));
    for (std::int64_t k = 0; k < count; ++k) {
      for (std::int64_t t = 0; t < plan.thinning; ++t) sweep();
      measure_correlations(corr);
      series.push(lattice_.total(), corr);
    }
  }

  void check_plan(const RunPlan& plan) const {
    plan.validate(params_);
    const double cost = plan.estimated_cost(params_);
    if (cost > plan.max_proposals)
      throw BudgetError("run refused: estimated cost " + std::to_string(cost) +
                        " proposal-units exceeds cap " + std::to_string(plan.max_proposals));
  }

  /// c[r] = (1/(Nx Ntau)) sum_{i,tau} s(i,tau) s(i+r,tau) for r < c.size().
  void measure_correlations(std::span<double> c) const {
    const double inv_v = 1.0 / static_cast<double>(params_.n_spins());
    for (std::size_t r = 0; r < c.size(); ++r) {
      std::int64_t acc = 0;
      for (int i = 0; i < params_.Nx; ++i) {
        const auto a = lattice_.column(i);
        const auto b = lattice_.column(i + static_cast<int>(r));
        std::int32_t part = 0;
        for (std::size_t t = 0; t < a.size(); ++t) part += a[t] * b[t];
        acc += part;
      }
      c[r] = static_cast<double>(acc) * inv_v;
    }
  }

  // --- checkpointing -----------------------------------------------------

  std::vector<std::uint8_t> checkpoint() const {
    ByteWriter w;
    write_checkpoint(w);
    w.seal();
    return w.take();
  }

  static Engine restore(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.verify_seal();
    Engine e = read_checkpoint(r);
    if (r.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint");
    return e;
  }

  /// Unsealed body; used when embedding the chain inside a larger stream.
  void write_checkpoint(ByteWriter& w) const {
    w.tag(kMagic);
    w.u32(kFormatVersion);
    w.f64(params_.J);
    w.f64(params_.B);
    w.f64(params_.alpha);
    w.f64(params_.s);
    w.i64(params_.Nx);
    w.i64(params_.Ntau);
    w.u64(master_seed_);
    w.u64(chain_index_);
    w.i64(sweeps_done_);
    w.u8(static_cast<std::uint8_t>(order_));
    for (auto word : rng_.state()) w.u64(word);
    w.u64(accepted_);
    w.u64(proposed_);
    for (auto v : lattice_.data()) w.u8(static_cast<std::uint8_t>(v));
  }

  static Engine read_checkpoint(ByteReader& r) {
    r.expect_tag(kMagic);
    const auto version = r.u32();
    if (version != kFormatVersion)
      throw CheckpointError("unsupported checkpoint format_version " + std::to_string(version));
    ModelParams p;
    p.J = r.f64();
    p.B = r.f64();
    p.alpha = r.f64();
    p.s = r.f64();
    const auto nx = r.i64();
    const auto ntau = r.i64();
    if (nx < 2 || ntau < 2 || nx > (1 << 20) || ntau > (1 << 24))
      throw CheckpointError("checkpoint: implausible lattice dimensions");
    p.Nx = static_cast<int>(nx);
    p.Ntau = static_cast<int>(ntau);
    try {
      p.validate();
    } catch (const DomainError& e) {
      throw CheckpointError(std::string("checkpoint: ") + e.what());
    }
    const auto master = r.u64();
    const auto chain = r.u64();
    const auto sweeps = r.i64();
    const auto order = r.u8();
    if (order > 1) throw CheckpointError("checkpoint: unknown sweep order");
    Xoshiro256::State st;
    for (auto& word : st) word = r.u64();
    const auto acc = r.u64();
    const auto prop = r.u64();
    const auto raw = r.bytes(static_cast<std::size_t>(p.n_spins()));
    std::vector<std::int8_t> spins(raw.size());
    for (std::size_t k = 0; k < raw.size(); ++k) {
      const auto v = static_cast<std::int8_t>(raw[k]);
      if (v != 1 && v != -1) throw CheckpointError("checkpoint: spin entry is not +-1");
      spins[k] = v;
    }
    Engine e(p, master, chain, StartState::ordered, static_cast<SweepOrder>(order));
    e.lattice_ = SpinLattice(p.Nx, p.Ntau, std::move(spins));
    e.rebuild_field_cache();
    e.rng_.set_state(st);
    e.sweeps_done_ = sweeps;
    e.accepted_ = acc;
    e.proposed_ = prop;
    return e;
  }

 private:
  static const ModelParams& validated(const ModelParams& p) {
    p.validate();
    return p;
  }

  void build_tables() {
    // Short-range part of dS only takes the values 2 (J a + Gamma b) with
    // a, b in {-2, 0, 2} after absorbing the sign of the flipped spin.
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        const double ds = 2.0 * (params_.J * (2 * a - 2) + gamma_ * (2 * b - 2));
        local_ds_[static_cast<std::size_t>(3 * a + b)] = ds;
        local_prob_[static_cast<std::size_t>(3 * a + b)] = std::exp(-ds);
      }
  }

  double delta_action(int i, int tau) const {
    const auto col = lattice_.column(i);
    const int s = col[static_cast<std::size_t>(tau)];
    const int ntau = params_.Ntau;
    const int spatial = lattice_(i - 1, tau) + lattice_(i + 1, tau);
    const int temporal = col[static_cast<std::size_t>((tau + ntau - 1) % ntau)] +
                         col[static_cast<std::size_t>((tau + 1) % ntau)];
    double h = params_.J * spatial + gamma_ * temporal;
    if (!kernel_.all_zero()) h += kernel_.field(col, tau);
    return 2.0 * s * h;
  }

  void propose(int i, int tau) {
    ++proposed_;
    bool accept;
    if (kernel_.all_zero()) {
      const auto col = lattice_.column(i);
      const int s = col[static_cast<std::size_t>(tau)];
      const int ntau = params_.Ntau;
      const int spatial = s * (lattice_(i - 1, tau) + lattice_(i + 1, tau));
      const int temporal = s * (col[static_cast<std::size_t>((tau + ntau - 1) % ntau)] +
                                col[static_cast<std::size_t>((tau + 1) % ntau)]);
      const auto slot = static_cast<std::size_t>(3 * (spatial / 2 + 1) + (temporal / 2 + 1));
      accept = local_ds_[slot] <= 0.0 || rng_.uniform() < local_prob_[slot];
    } else {
      const double ds = cached_delta_action(i, tau);
      accept = ds <= 0.0 || rng_.uniform() < std::exp(-ds);
    }
    if (accept) {
      if (!kernel_.all_zero()) update_field_cache(i, tau);
      lattice_.flip(i, tau);
      ++accepted_;
    }
  }

  // The long-range field sum_d k[d] s(i, tau+d) is cached per spin in fixed
  // point: q[d] = round(k[d] 2^shift). Integer updates are exact, so the cache
  // always equals a fresh rebuild from the spins and restored chains replay
  // bit-identically. Quantization error is below Ntau 2^-(shift+1).
  void rebuild_field_cache() {
    field_cache_.clear();
    if (kernel_.all_zero()) return;
    const int ntau = params_.Ntau;
    double total = 0.0;
    for (double v : kernel_.values()) total += v;
    int shift = 60 - static_cast<int>(std::ceil(std::log2(std::max(1.0, total))));
    shift = std::min(shift, 60);
    field_scale_ = std::ldexp(1.0, -shift);
    qkernel_.assign(static_cast<std::size_t>(2 * ntau), 0);
    for (int x = 0; x < 2 * ntau; ++x)
      qkernel_[static_cast<std::size_t>(x)] =
          std::llround(std::ldexp(kernel_[static_cast<std::size_t>(x % ntau)], shift));
    field_cache_.assign(static_cast<std::size_t>(params_.n_spins()), 0);
    for (int i = 0; i < params_.Nx; ++i) {
      const auto col = lattice_.column(i);
      for (int t = 0; t < ntau; ++t) {
        const std::int64_t* q = qkernel_.data() + (ntau - t);
        std::int64_t acc = 0;
        for (int u = 0; u < ntau; ++u) acc += q[u] * col[static_cast<std::size_t>(u)];
        field_cache_[static_cast<std::size_t>(i) * static_cast<std::size_t>(ntau) +
                     static_cast<std::size_t>(t)] = acc;
      }
    }
  }

  // Spin (i, tau) is about to change sign: every field in column i moves by
  // -2 s q[(tau - u) mod Ntau].
  void update_field_cache(int i, int tau) {
    const int ntau = params_.Ntau;
    const std::int64_t twice_s = 2 * lattice_(i, tau);
    std::int64_t* f = field_cache_.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(ntau);
    const std::int64_t* q = qkernel_.data() + tau + ntau;  // q[-u] == k[(tau - u) mod Ntau]
    for (int u = 0; u < ntau; ++u) f[u] -= twice_s * q[-u];
  }

  double cached_delta_action(int i, int tau) const {
    const auto col = lattice_.column(i);
    const int s = col[static_cast<std::size_t>(tau)];
    const int ntau = params_.Ntau;
    const int spatial = lattice_(i - 1, tau) + lattice_(i + 1, tau);
    const int temporal = col[static_cast<std::size_t>((tau + ntau - 1) % ntau)] +
                         col[static_cast<std::size_t>((tau + 1) % ntau)];
    const double lr = static_cast<double>(
                          field_cache_[static_cast<std::size_t>(i) * static_cast<std::size_t>(ntau) +
                                       static_cast<std::size_t>(tau)]) *
                      field_scale_;
    return 2.0 * s * (params_.J * spatial + gamma_ * temporal + lr);
  }

  ModelParams params_;
  double gamma_;
  KernelTable kernel_;
  SpinLattice lattice_;
  Xoshiro256 rng_;
  std::int64_t sweeps_done_ = 0;
  std::uint64_t master_seed_;
  std::uint64_t chain_index_;
  SweepOrder order_;
  std::uint64_t accepted_ = 0;
  std::uint64_t proposed_ = 0;
  std::array<double, 9> local_ds_{};
  std::array<double, 9> local_prob_{};
  std::vector<std::int64_t> qkernel_;
  std::vector<std::int64_t> field_cache_;
  double field_scale_ = 0.0;
};

/// Burn-in length: 10 max(Nx, Ntau) sweeps, doubled until <|M|> over a short
/// probe agrees within 2 sigma between an ordered and a random start.
/// Throws NumericalError after 10 doublings.
inline std::int64_t auto_burn_in(const ModelParams& p, std::uint64_t master_seed, std::uint64_t chain_index,
                                 SweepOrder order) {
  constexpr std::int64_t kProbe = 256;
  constexpr int kMaxDoublings = 10;
  Engine hot(p, master_seed, chain_index, StartState::random, order);
  Engine cold(p, master_seed, chain_index, StartState::ordered, order);
  const double v = static_cast<double>(p.n_spins());
  auto probe = [&](Engine& e) {
    std::vector<double> m(kProbe);
    for (auto& x : m) {
      e.sweep();
      x = std::abs(static_cast<double>(e.lattice().total())) / v;
    }
    return binned_error(m);
  };
  std::int64_t b = 10 * std::max(p.Nx, p.Ntau);
  for (int k = 0; k <= kMaxDoublings; ++k, b *= 2) {
    hot.equilibrate(std::max<std::int64_t>(0, b - hot.sweeps_done()));
    cold.equilibrate(std::max<std::int64_t>(0, b - cold.sweeps_done()));
    const auto h = probe(hot), c = probe(cold);
    if (std::abs(h.mean - c.mean) <= 2.0 * std::hypot(h.std_error, c.std_error)) return b;
  }
  throw NumericalError("auto_burn_in: ordered and random starts still disagree after " +
                       std::to_string(b / 2) + " sweeps");
}

}  // namespace qcm
