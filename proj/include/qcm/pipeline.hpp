/**
 * @file pipeline.hpp
 * @brief End-to-end analyses on top of sweep output: peak extraction and
 *        finite-size scaling, and single-point correlation runs.
 */
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qcm/engine.hpp"
#include "qcm/fit.hpp"
#include "qcm/observables.hpp"
#include "qcm/sweep.hpp"

namespace qcm {

/// Replica-merged susceptibility curve of one lattice size.
struct SizeCurve {
  LatticeSize size;
  std::vector<double> alpha, chi, chi_err;
  bool replicas_consistent = true;
};

inline std::vector<SizeCurve> curves_from_rows(const std::vector<ChainRow>& rows) {
  std::map<std::pair<int, int>, std::map<double, std::pair<std::vector<double>, std::vector<double>>>> grouped;
  for (const auto& r : rows) {
    auto& cell = grouped[{r.Nx, r.Ntau}][r.alpha];
    cell.first.push_back(r.chi);
    cell.second.push_back(r.chi_err);
  }
  std::vector<SizeCurve> out;
  for (const auto& [sz, by_alpha] : grouped) {
    SizeCurve c;
    c.size = {sz.first, sz.second};
    for (const auto& [a, vals] : by_alpha) {
      const auto m = inverse_variance_merge(vals.first, vals.second);
      c.alpha.push_back(a);
      c.chi.push_back(m.mean);
      c.chi_err.push_back(m.err);
      c.replicas_consistent = c.replicas_consistent && m.consistent;
    }
    out.push_back(std::move(c));
  }
  return out;
}

struct ScalingReport {
  std::vector<SizeCurve> curves;
  std::vector<SizePeak> peaks;
  FitResult fit;
  double alpha_c = NAN, alpha_c_err = NAN, nu = NAN, nu_err = NAN;
};

/// Peak per size, then alpha_max(N) = alpha_C + a N^(-1/nu). Peak failures of
/// all sizes are collected into one NumericalError.
inline ScalingReport fit_scaling(const std::vector<ChainRow>& rows) {
  ScalingReport rep;
  rep.curves = curves_from_rows(rows);
  std::string failures;
  for (const auto& c : rep.curves) {
    try {
      rep.peaks.push_back({static_cast<double>(c.size.Nx), find_peak(c.alpha, c.chi, c.chi_err)});
    } catch (const Error& e) {
      failures += "\n  N=" + std::to_string(c.size.Nx) + ": " + e.what();
    }
  }
  if (!failures.empty()) throw NumericalError("fit-scaling: peak extraction failed" + failures);
  rep.fit = scaling_pipeline(rep.peaks);
  if (!rep.fit.converged) throw NumericalError("fit-scaling: scaling fit failed: " + rep.fit.diagnostic);
  rep.alpha_c = rep.fit.params[0];
  rep.alpha_c_err = rep.fit.err(0);
  rep.nu = rep.fit.params[2];
  rep.nu_err = rep.fit.err(2);
  return rep;
}

inline nlohmann::json to_json(const ScalingReport& r) {
  nlohmann::json sizes = nlohmann::json::array();
  for (std::size_t k = 0; k < r.peaks.size(); ++k)
    sizes.push_back({{"N", r.curves[k].size.Nx},
                     {"Ntau", r.curves[k].size.Ntau},
                     {"alpha_max", r.peaks[k].peak.alpha_max},
                     {"alpha_max_err", r.peaks[k].peak.alpha_max_err},
                     {"chi_max", r.peaks[k].peak.chi_max},
                     {"replicas_consistent", r.curves[k].replicas_consistent}});
  return {{"sizes", sizes},     {"alpha_C", r.alpha_c}, {"alpha_C_err", r.alpha_c_err},
          {"nu_alpha", r.nu},   {"nu_alpha_err", r.nu_err}, {"fit", r.fit},
          {"version", kVersion}};
}

inline std::string scaling_csv(const ScalingReport& r) {
  std::string out = "invN,alpha_max,alpha_max_err\n";
  for (const auto& p : r.peaks)
    out += fmt_double(1.0 / p.N) + ',' + fmt_double(p.peak.alpha_max) + ',' + fmt_double(p.peak.alpha_max_err) + '\n';
  return out;
}

/// One long chain at a fixed point of parameter space.
struct CorrelateConfig {
  ModelParams params;
  RunPlan plan;  ///< max_r < 0 means Nx/2
  std::uint64_t master_seed = 0;
  int r_min = 4;
  int r_max = -1;  ///< < 0: Nx/2
  bool chord = true;  ///< fit against chord distance on the periodic chain
};

inline CorrelateConfig correlate_config_from_json(const nlohmann::json& j) {
  CorrelateConfig c;
  try {
    c.params = j.at("params").get<ModelParams>();
    c.plan = j.at("plan").get<RunPlan>();
    if (!j.at("plan").contains("max_r")) c.plan.max_r = -1;
    c.plan.measure_correlations = true;
    c.master_seed = j.value("master_seed", std::uint64_t{0});
    c.r_min = j.value("r_min", 4);
    c.r_max = j.value("r_max", -1);
    c.chord = j.value("chord_distance", true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("correlate config: ") + e.what());
  } catch (const DomainError& e) {
    throw ConfigError(std::string("correlate config: ") + e.what());
  }
  if (c.plan.max_r < 0) c.plan.max_r = c.params.Nx / 2;
  if (c.r_max < 0) c.r_max = c.plan.max_r;
  if (c.r_min < 1 || c.r_max > c.plan.max_r || c.r_max - c.r_min < 3)
    throw ConfigError("correlate config: need 1 <= r_min, r_max <= max_r and at least 4 fit points");
  return c;
}

struct CorrelateResult {
  ObservableSeries series;
  RunSummary summary;
  CorrelationExponent exponent;
};

inline CorrelateResult run_correlate(const CorrelateConfig& c) {
  Engine e(c.params, c.master_seed, 0);
  CorrelateResult out;
  out.series = e.run(c.plan);
  out.summary = summarize(out.series);
  out.exponent = correlation_exponent(out.summary.C, c.r_min, c.r_max, c.chord ? c.params.Nx : 0);
  return out;
}

inline nlohmann::json to_json(const CorrelateResult& r) {
  auto j = summary_record(r.series, r.summary);
  j["b"] = r.exponent.b;
  j["b_err"] = r.exponent.b_err;
  j["fit_window"] = {r.exponent.r_min, r.exponent.r_max};
  j["chord_ring"] = r.exponent.ring;
  j["fit"] = r.exponent.fit;
  return j;
}

}  // namespace qcm
