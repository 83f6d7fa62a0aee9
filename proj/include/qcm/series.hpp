#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "qcm/error.hpp"
#include "qcm/model.hpp"
#include "qcm/serial.hpp"

namespace qcm {

/// How a chain is sampled after burn-in.
/// burn_in_sweeps value meaning "choose with auto_burn_in()".
inline constexpr std::int64_t kAutoBurnIn = -1;

struct RunPlan {
  std::int64_t burn_in_sweeps = 0;  ///< or kAutoBurnIn
  std::int64_t n_samples = 1;
  std::int64_t thinning = 1;  ///< sweeps between measurements
  bool measure_correlations = false;
  int max_r = 0;
  /// Refuse runs whose estimated spin-flip proposals exceed this.
  double max_proposals = 1e13;

  void validate(const ModelParams& p) const {
    if (burn_in_sweeps < 0 && burn_in_sweeps != kAutoBurnIn)
      throw ConfigError("RunPlan: burn_in_sweeps must be >= 0 or \"auto\"");
    if (n_samples < 1) throw ConfigError("RunPlan: n_samples must be >= 1");
    if (thinning < 1) throw ConfigError("RunPlan: thinning must be >= 1");
    if (measure_correlations && (max_r < 0 || max_r > p.Nx / 2))
      throw ConfigError("RunPlan: max_r must lie in [0, Nx/2]");
  }

  /// Spin-flip proposals of the burn-in plus sampling phases, weighted by the
  /// O(Ntau) cost of the long-range field when a bath is present.
  double estimated_cost(const ModelParams& p) const {
    // auto burn-in: two probe chains plus the chain itself at the starting length
    const double burn = burn_in_sweeps == kAutoBurnIn ? 30.0 * std::max(p.Nx, p.Ntau)
                                                      : static_cast<double>(burn_in_sweeps);
    const double sweeps = burn + static_cast<double>(n_samples) * static_cast<double>(thinning);
    const double per_flip = p.alpha > 0.0 ? static_cast<double>(p.Ntau) : 1.0;
    return sweeps * static_cast<double>(p.n_spins()) * per_flip;
  }

  friend bool operator==(const RunPlan&, const RunPlan&) = default;
};

inline void to_json(nlohmann::json& j, const RunPlan& p) {
  j = nlohmann::json{{"burn_in_sweeps", p.burn_in_sweeps == kAutoBurnIn ? nlohmann::json("auto")
                                                                     : nlohmann::json(p.burn_in_sweeps)},
                     {"n_samples", p.n_samples},
                     {"thinning", p.thinning},
                     {"measure_correlations", p.measure_correlations},
                     {"max_r", p.max_r},
                     {"max_proposals", p.max_proposals}};
}

inline void from_json(const nlohmann::json& j, RunPlan& p) {
  try {
    const auto burn = j.value("burn_in_sweeps", nlohmann::json("auto"));
    p.burn_in_sweeps = burn == "auto" ? kAutoBurnIn : burn.get<std::int64_t>();
    p.n_samples = j.at("n_samples").get<std::int64_t>();
    p.thinning = j.value("thinning", std::int64_t{1});
    p.measure_correlations = j.value("measure_correlations", false);
    p.max_r = j.value("max_r", 0);
    p.max_proposals = j.value("max_proposals", 1e13);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("RunPlan: ") + e.what());
  }
}

/// Provenance attached to a sample stream.
struct SeriesMeta {
  ModelParams params;
  RunPlan plan;
  std::uint64_t master_seed = 0;
  std::uint64_t chain_index = 0;
  std::int64_t sweeps_before_sampling = 0;
  std::int64_t sweeps_per_sample = 1;
};

inline void to_json(nlohmann::json& j, const SeriesMeta& m) {
  j = nlohmann::json{{"params", m.params},
                     {"plan", m.plan},
                     {"master_seed", m.master_seed},
                     {"chain_index", m.chain_index},
                     {"sweeps_before_sampling", m.sweeps_before_sampling},
                     {"sweeps_per_sample", m.sweeps_per_sample}};
}

/// Per-measurement records. corr(k, r) is (1/(Nx Ntau)) sum_{i,tau}
/// s(i,tau) s(i+r,tau), so corr(k, 0) == 1.
struct ObservableSeries {
  SeriesMeta meta;
  std::vector<std::int64_t> sum_s;
  std::vector<std::int64_t> sum_s_sq;
  std::vector<std::int64_t> abs_sum_s;
  int n_r = 0;  ///< max_r + 1 when correlations were measured, else 0
  std::vector<double> corr;

  std::size_t size() const { return sum_s.size(); }
  bool has_correlations() const { return n_r > 0; }

  std::span<const double> corr_row(std::size_t k) const {
    return {corr.data() + k * static_cast<std::size_t>(n_r), static_cast<std::size_t>(n_r)};
  }

  void push(std::int64_t m, std::span<const double> c) {
    sum_s.push_back(m);
    sum_s_sq.push_back(m * m);
    abs_sum_s.push_back(m < 0 ? -m : m);
    corr.insert(corr.end(), c.begin(), c.end());
  }

  std::vector<double> magnetization_abs_density() const {
    const double v = static_cast<double>(meta.params.n_spins());
    std::vector<double> out(size());
    for (std::size_t k = 0; k < size(); ++k) out[k] = static_cast<double>(abs_sum_s[k]) / v;
    return out;
  }

  std::vector<double> sum_sq_as_double() const { return {sum_s_sq.begin(), sum_s_sq.end()}; }

  void serialize(ByteWriter& w) const {
    w.u64(size());
    w.u32(static_cast<std::uint32_t>(n_r));
    for (std::size_t k = 0; k < size(); ++k) w.i64(sum_s[k]);
    for (double c : corr) w.f64(c);
  }

  /// Restores records into an existing series (meta is kept).
  void deserialize(ByteReader& r) {
    const auto n = r.u64();
    const auto nr = static_cast<int>(r.u32());
    if (n > (std::uint64_t{1} << 40)) throw CheckpointError("implausible sample count");
    sum_s.clear();
    sum_s_sq.clear();
    abs_sum_s.clear();
    corr.clear();
    n_r = nr;
    std::vector<std::int64_t> m(n);
    for (auto& v : m) v = r.i64();
    std::vector<double> c(n * static_cast<std::uint64_t>(nr));
    for (auto& v : c) v = r.f64();
    for (std::size_t k = 0; k < n; ++k)
      push(m[k], std::span<const double>(c).subspan(k * static_cast<std::size_t>(nr),
                                                    static_cast<std::size_t>(nr)));
  }
};

}  // namespace qcm
