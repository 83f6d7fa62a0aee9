// qcm command-line driver.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 bad config or usage,
// 3 run refused by the proposal budget, 4 numerical failure.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qcm/qcm.hpp"

namespace {

using qcm::fs::path;

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kBudget = 3, kNumerical = 4 };

void emit(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

void ensure_dir(const path& dir) {
  std::error_code ec;
  qcm::fs::create_directories(dir, ec);
  if (ec) throw qcm::ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
}

/// A merged.csv path, or a sweep directory containing one.
std::vector<qcm::ChainRow> load_rows(const std::vector<std::string>& inputs) {
  std::vector<qcm::ChainRow> rows;
  for (const auto& in : inputs) {
    path p(in);
    if (qcm::fs::is_directory(p)) p /= "merged.csv";
    if (!qcm::fs::exists(p)) throw qcm::ConfigError("no merged CSV at " + p.string());
    const auto part = qcm::parse_merged_csv(qcm::read_text_file(p));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

struct SweepArgs {
  std::string config, out;
  int workers = 0;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  std::int64_t stop_after = -1;
};

int cmd_sweep(const SweepArgs& a) {
  auto cfg = qcm::sweep_config_from_json(qcm::read_json_file(a.config));
  if (a.workers > 0) cfg.workers = a.workers;
  if (a.seed) cfg.master_seed = *a.seed;
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.resume && !qcm::fs::exists(path(cfg.output_dir) / "manifest.json"))
    throw qcm::ConfigError("--resume: no sweep manifest in " + cfg.output_dir);
  qcm::SweepOptions opt;
  opt.stop_after_sweeps = a.stop_after;
  const auto o = qcm::run_sweep(cfg, opt);
  emit({{"complete", o.complete},
        {"chains_run", o.chains_run},
        {"chains_skipped", o.chains_skipped},
        {"output_dir", cfg.output_dir},
        {"config_hash", cfg.hash()}});
  return kOk;
}

int cmd_resume(const std::string& out, int workers, std::int64_t stop_after) {
  if (out.empty()) throw qcm::ConfigError("resume: --out is required");
  const auto cfg = qcm::load_manifest_config(out, workers > 0 ? workers : 1);
  qcm::SweepOptions opt;
  opt.stop_after_sweeps = stop_after;
  const auto o = qcm::run_sweep(cfg, opt);
  emit({{"complete", o.complete},
        {"chains_run", o.chains_run},
        {"chains_skipped", o.chains_skipped},
        {"output_dir", cfg.output_dir},
        {"config_hash", cfg.hash()}});
  return kOk;
}

int cmd_fit_scaling(const std::vector<std::string>& inputs, const std::string& out) {
  const auto rep = qcm::fit_scaling(load_rows(inputs));
  const auto j = qcm::to_json(rep);
  if (!out.empty()) {
    ensure_dir(out);
    qcm::write_file_atomic(path(out) / "fit_scaling.json", j.dump(2) + '\n');
    qcm::write_file_atomic(path(out) / "scaling.csv", qcm::scaling_csv(rep));
  }
  emit(j);
  return kOk;
}

int cmd_correlate(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out) {
  auto c = qcm::correlate_config_from_json(qcm::read_json_file(config));
  if (seed) c.master_seed = *seed;
  const auto r = qcm::run_correlate(c);
  const auto j = qcm::to_json(r);
  if (!out.empty()) {
    ensure_dir(out);
    std::ostringstream csv;
    qcm::write_correlation_csv(csv, r.summary.C);
    qcm::write_file_atomic(path(out) / "correlation.csv", csv.str());
    qcm::write_file_atomic(path(out) / "correlation.json", j.dump(2) + '\n');
  }
  emit({{"b", j["b"]}, {"b_err", j["b_err"]}, {"fit_window", j["fit_window"]}, {"chi", j["chi"]},
        {"converged", r.exponent.fit.converged}});
  if (!r.exponent.fit.converged) throw qcm::NumericalError("correlate: fit failed: " + r.exponent.fit.diagnostic);
  return kOk;
}

struct RgArgs {
  std::optional<double> epsilon, s, z_plus_eta, eta;
  double g0 = 0.01, t_end = 40.0, dt = 0.01;
  std::string out;
};

int cmd_rg(const RgArgs& a) {
  using namespace qcm::rg;
  nlohmann::json rep;
  ExponentSet e;
  if (a.epsilon) {
    e = exponents_phi4(*a.epsilon);
    const auto [d, g] = fixed_point(*a.epsilon);
    rep["epsilon"] = *a.epsilon;
    rep["fixed_point"] = {{"delta", d}, {"g", g}};
    if (!a.out.empty() && *a.epsilon > 0.0) {
      ensure_dir(a.out);
      std::ostringstream csv;
      write_trajectory_csv(csv, follow_critical_manifold(a.g0, *a.epsilon, a.t_end, a.dt));
      qcm::write_file_atomic(path(a.out) / "flow.csv", csv.str());
    }
  } else {
    std::optional<ContinuousMeasurement> m;
    if (a.z_plus_eta) m = ContinuousMeasurement{*a.z_plus_eta, a.eta};
    e = bath_regime_exponents(*a.s, m);
    rep["s"] = *a.s;
  }
  rep["short_time"] = prediction_json(e, qfi_scaling_prediction(e, true, TimeRegime::short_time));
  try {
    rep["long_time"] = prediction_json(e, qfi_scaling_prediction(e, true, TimeRegime::long_time));
  } catch (const qcm::DomainError& err) {
    rep["long_time"] = {{"unavailable", err.what()}};
  }
  rep["version"] = qcm::kVersion;
  if (!a.out.empty()) {
    ensure_dir(a.out);
    qcm::write_file_atomic(path(a.out) / "rg.json", rep.dump(2) + '\n');
  }
  emit(rep);
  return kOk;
}

int cmd_oracle(const std::string& config, qcm::ModelParams p, const std::string& out) {
  if (!config.empty()) p = qcm::read_json_file(config).get<qcm::ModelParams>();
  try {
    p.validate();
  } catch (const qcm::DomainError& e) {
    throw qcm::ConfigError(std::string("oracle: ") + e.what());
  }
  const nlohmann::json j = qcm::enumerate(p);
  if (!out.empty()) {
    ensure_dir(out);
    qcm::write_file_atomic(path(out) / "oracle.json", j.dump(2) + '\n');
  }
  emit(j);
  return kOk;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const qcm::BudgetError& e) {
    std::cerr << "qcm: " << e.what() << '\n';
    return kBudget;
  } catch (const qcm::NumericalError& e) {
    std::cerr << "qcm: numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const qcm::Error& e) {
    // config, usage, domain and checkpoint problems all come from the inputs
    std::cerr << "qcm: " << e.what() << '\n';
    return kConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "qcm: bad JSON input: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "qcm: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo, exact enumeration and scaling analysis for the dissipative quantum Ising chain"};
  app.set_version_flag("--version", std::string(qcm::kVersion));
  app.require_subcommand(1);

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Run every chain of a (size, alpha, replica) grid");
  sweep->add_option("--config", sw.config, "Sweep config (JSON)")->required()->check(CLI::ExistingFile);
  sweep->add_option("--workers", sw.workers, "Parallel chains (overrides config)")->check(CLI::PositiveNumber);
  sweep->add_option("--seed", sw.seed, "Master seed (overrides config)");
  sweep->add_option("--out", sw.out, "Output directory (overrides config)");
  sweep->add_flag("--resume", sw.resume, "Require an existing sweep in the output directory");
  sweep->add_option("--stop-after-sweeps", sw.stop_after, "Stop after this many sweeps, leaving checkpoints")
      ->group("");

  std::string resume_out;
  int resume_workers = 0;
  std::int64_t resume_stop = -1;
  auto* resume = app.add_subcommand("resume", "Continue an interrupted sweep from its output directory");
  resume->add_option("--out", resume_out, "Sweep output directory")->required();
  resume->add_option("--workers", resume_workers, "Parallel chains")->check(CLI::PositiveNumber);
  resume->add_option("--stop-after-sweeps", resume_stop, "")->group("");

  std::vector<std::string> fit_inputs;
  std::string fit_out;
  auto* fit = app.add_subcommand("fit-scaling", "Peak positions per size and the alpha_C, nu fit");
  fit->add_option("inputs", fit_inputs, "merged.csv files or sweep directories")->required();
  fit->add_option("--out", fit_out, "Directory for fit_scaling.json and scaling.csv");

  std::string corr_config, corr_out;
  std::optional<std::uint64_t> corr_seed;
  auto* corr = app.add_subcommand("correlate", "Equal-time correlation function and its decay exponent");
  corr->add_option("--config", corr_config, "Point config (JSON)")->required()->check(CLI::ExistingFile);
  corr->add_option("--seed", corr_seed, "Master seed (overrides config)");
  corr->add_option("--out", corr_out, "Directory for correlation.csv and correlation.json");

  RgArgs rga;
  auto* rg = app.add_subcommand("rg", "Fixed point, exponents and QFI scaling predictions");
  auto* eps_opt = rg->add_option("--epsilon", rga.epsilon, "2 - D for the phi^4 expansion");
  auto* s_opt = rg->add_option("--s", rga.s, "Bath spectral exponent");
  eps_opt->excludes(s_opt);
  rg->add_option("--z-plus-eta", rga.z_plus_eta, "Measured z + eta (continuous regime)")->needs(s_opt);
  rg->add_option("--eta", rga.eta, "Measured eta (continuous regime)")->needs(s_opt);
  rg->add_option("--g0", rga.g0, "Initial coupling for the flow trajectory");
  rg->add_option("--t-end", rga.t_end, "Flow time for the trajectory");
  rg->add_option("--out", rga.out, "Directory for rg.json and flow.csv");

  std::string oracle_config, oracle_out;
  qcm::ModelParams op{1.0, 1.0, 0.0, 1.0, 2, 2};
  auto* oracle = app.add_subcommand("oracle", "Exact enumeration for lattices of at most 20 spins");
  oracle->add_option("--config", oracle_config, "Model parameters (JSON)")->check(CLI::ExistingFile);
  oracle->add_option("--J", op.J);
  oracle->add_option("--B", op.B);
  oracle->add_option("--alpha", op.alpha);
  oracle->add_option("--s", op.s);
  oracle->add_option("--Nx", op.Nx);
  oracle->add_option("--Ntau", op.Ntau);
  oracle->add_option("--out", oracle_out, "Directory for oracle.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  return guarded([&]() -> int {
    if (*sweep) return cmd_sweep(sw);
    if (*resume) return cmd_resume(resume_out, resume_workers, resume_stop);
    if (*fit) return cmd_fit_scaling(fit_inputs, fit_out);
    if (*corr) return cmd_correlate(corr_config, corr_seed, corr_out);
    if (*rg) {
      if (!rga.epsilon && !rga.s) throw qcm::UsageError("rg: give --epsilon or --s");
      return cmd_rg(rga);
    }
    if (*oracle) return cmd_oracle(oracle_config, op, oracle_out);
    return kConfig;
  });
}
