/**
 * @file sweep.hpp
 * @brief Grid scans over (size, alpha, replica) with independent chains.
 *
 * Chain k of a sweep (k = flat index over sizes x alpha_grid x replicas) is an
 * Engine seeded from (master_seed, k), so its result does not depend on which
 * worker runs it or when. Output directory layout:
 *
 *   manifest.json          config, config hash, version
 *   chains/<k>.json        per-chain result record (written once, atomically)
 *   chains/<k>.progress    checkpoint of an unfinished chain
 *   results.jsonl          all chain records in canonical order
 *   merged.csv             N,Ntau,alpha,replica,chi,chi_err,Ne,Ne_err
 *   summary.csv            replicas merged by inverse-variance weighting
 */
#pragma once

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "qcm/engine.hpp"
#include "qcm/error.hpp"
#include "qcm/observables.hpp"
#include "qcm/serial.hpp"

namespace qcm {

namespace fs = std::filesystem;

struct LatticeSize {
  int Nx = 0;
  int Ntau = 0;
  friend bool operator==(const LatticeSize&, const LatticeSize&) = default;
};

struct SweepConfig {
  static constexpr int kSchemaVersion = 1;

  double J = 1.0;
  double B = 1.0;
  double s = 1.0;
  std::vector<double> alpha_grid;
  std::vector<LatticeSize> sizes;
  RunPlan plan;  ///< plan.max_r < 0 means Nx/2 for every size
  int replicas = 1;
  std::uint64_t master_seed = 0;
  int workers = 1;
  std::string output_dir;
  std::int64_t checkpoint_every = 1000;  ///< sweeps between progress files

  void validate() const {
    if (alpha_grid.empty()) throw ConfigError("sweep config: alpha_grid is empty");
    if (sizes.empty()) throw ConfigError("sweep config: sizes is empty");
    if (replicas < 1) throw ConfigError("sweep config: replicas must be >= 1");
    if (workers < 1) throw ConfigError("sweep config: workers must be >= 1");
    if (checkpoint_every < 1) throw ConfigError("sweep config: checkpoint_every must be >= 1");
    if (output_dir.empty()) throw ConfigError("sweep config: output_dir is required");
    for (const auto& sz : sizes)
      for (double a : alpha_grid) {
        try {
          const auto p = params_for(sz, a);
          plan_for(p).validate(p);
        } catch (const DomainError& e) {
          throw ConfigError(std::string("sweep config: ") + e.what());
        }
      }
  }

  ModelParams params_for(const LatticeSize& sz, double alpha) const {
    ModelParams p{J, B, alpha, s, sz.Nx, sz.Ntau};
    p.validate();
    return p;
  }

  RunPlan plan_for(const ModelParams& p) const {
    RunPlan out = plan;
    if (out.max_r < 0) out.max_r = p.Nx / 2;
    return out;
  }

  std::size_t n_chains() const { return sizes.size() * alpha_grid.size() * static_cast<std::size_t>(replicas); }

  /// Fields that determine the numbers; workers and output_dir are excluded.
  nlohmann::json canonical() const {
    nlohmann::json sz = nlohmann::json::array();
    for (const auto& s2 : sizes) sz.push_back({s2.Nx, s2.Ntau});
    return {{"schema_version", kSchemaVersion},
            {"J", J},
            {"B", B},
            {"s", s},
            {"alpha_grid", alpha_grid},
            {"sizes", sz},
            {"plan", plan},
            {"replicas", replicas},
            {"master_seed", master_seed},
            {"checkpoint_every", checkpoint_every}};
  }

  std::string hash() const { return hex64(fnv1a64(canonical().dump())); }
};

inline SweepConfig sweep_config_from_json(const nlohmann::json& j) {
  SweepConfig c;
  try {
    const int schema = j.value("schema_version", SweepConfig::kSchemaVersion);
    if (schema != SweepConfig::kSchemaVersion)
      throw ConfigError("sweep config: unsupported schema_version " + std::to_string(schema));
    c.J = j.at("J").get<double>();
    c.B = j.at("B").get<double>();
    c.s = j.value("s", 1.0);
    c.alpha_grid = j.at("alpha_grid").get<std::vector<double>>();
    for (const auto& e : j.at("sizes")) {
      if (!e.is_array() || e.size() != 2) throw ConfigError("sweep config: sizes entries are [Nx, Ntau]");
      c.sizes.push_back({e[0].get<int>(), e[1].get<int>()});
    }
    c.plan = j.at("plan").get<RunPlan>();
    if (!j.at("plan").contains("max_r")) c.plan.max_r = -1;
    c.replicas = j.value("replicas", 1);
    c.master_seed = j.value("master_seed", std::uint64_t{0});
    c.workers = j.value("workers", 1);
    c.output_dir = j.value("output_dir", std::string{});
    c.checkpoint_every = j.value("checkpoint_every", std::int64_t{1000});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sweep config: ") + e.what());
  }
  return c;
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary file and rename, so readers never see partial files.
inline void write_file_atomic(const fs::path& path, std::string_view content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ConfigError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Leaves the file untouched when the content is already identical.
inline void write_if_changed(const fs::path& path, const std::string& content) {
  if (fs::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (ss.str() == content) return;
  }
  write_file_atomic(path, content);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// One row of merged.csv.
struct ChainRow {
  int Nx = 0, Ntau = 0;
  double alpha = 0.0;
  int replica = 0;
  double chi = NAN, chi_err = NAN, Ne = NAN, Ne_err = NAN;
};

inline std::string merged_csv_header() { return "N,Ntau,alpha,replica,chi,chi_err,Ne,Ne_err\n"; }

inline std::string merged_csv_line(const ChainRow& r) {
  return std::to_string(r.Nx) + ',' + std::to_string(r.Ntau) + ',' + fmt_double(r.alpha) + ',' +
         std::to_string(r.replica) + ',' + fmt_double(r.chi) + ',' + fmt_double(r.chi_err) + ',' +
         fmt_double(r.Ne) + ',' + fmt_double(r.Ne_err) + '\n';
}

/// Parses merged.csv content (header required).
inline std::vector<ChainRow> parse_merged_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line + '\n' != merged_csv_header())
    throw ConfigError("merged CSV: unexpected header '" + line + "'");
  std::vector<ChainRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw ConfigError("merged CSV: bad row '" + line + "'");
    try {
      rows.push_back({std::stoi(f[0]), std::stoi(f[1]), std::stod(f[2]), std::stoi(f[3]), std::stod(f[4]),
                      std::stod(f[5]), std::stod(f[6]), std::stod(f[7])});
    } catch (const std::exception&) {
      throw ConfigError("merged CSV: unparsable row '" + line + "'");
    }
  }
  return rows;
}

/// Inverse-variance mean of replica values; `consistent` is false when any
/// replica lies more than 4 sigma from the weighted mean.
struct MergedValue {
  double mean = NAN;
  double err = NAN;
  bool consistent = true;
};

inline MergedValue inverse_variance_merge(std::span<const double> v, std::span<const double> e) {
  MergedValue out;
  double sw = 0.0, swx = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (!std::isfinite(v[k]) || !(e[k] > 0.0)) continue;
    const double w = 1.0 / (e[k] * e[k]);
    sw += w;
    swx += w * v[k];
  }
  if (sw == 0.0) {
    // zero-error replicas (degenerate chains): plain mean
    double acc = 0.0;
    int n = 0;
    for (double x : v)
      if (std::isfinite(x)) acc += x, ++n;
    if (n > 0) out.mean = acc / n, out.err = 0.0;
    return out;
  }
  out.mean = swx / sw;
  out.err = std::sqrt(1.0 / sw);
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (!std::isfinite(v[k]) || !(e[k] > 0.0)) continue;
    if (std::abs(v[k] - out.mean) > 4.0 * e[k]) out.consistent = false;
  }
  return out;
}

struct SweepOptions {
  /// Stop (leaving progress files) once this many sweeps were executed in
  /// this process; < 0 means no limit. Used to exercise resume.
  std::int64_t stop_after_sweeps = -1;
};

struct SweepOutcome {
  bool complete = false;
  std::size_t chains_run = 0;      ///< chains that did work in this call
  std::size_t chains_skipped = 0;  ///< chains already finished on disk
  fs::path merged_csv;
};

namespace detail {

struct ChainTask {
  std::size_t flat = 0;
  LatticeSize size;
  double alpha = 0.0;
  int replica = 0;
};

inline std::vector<ChainTask> enumerate_chains(const SweepConfig& c) {
  std::vector<ChainTask> out;
  std::size_t flat = 0;
  for (const auto& sz : c.sizes)
    for (double a : c.alpha_grid)
      for (int r = 0; r < c.replicas; ++r) out.push_back({flat++, sz, a, r});
  return out;
}

inline constexpr std::string_view kProgressMagic = "QCMPROG1";

inline std::vector<std::uint8_t> encode_progress(const Engine& e, const ObservableSeries& series) {
  ByteWriter w;
  w.tag(kProgressMagic);
  e.write_checkpoint(w);
  series.serialize(w);
  w.seal();
  return w.take();
}

class StopBudget {
 public:
  explicit StopBudget(std::int64_t limit) : limit_(limit) {}
  /// Returns false once the limit is exhausted.
  bool consume(std::int64_t sweeps) {
    if (limit_ < 0) return true;
    return used_.fetch_add(sweeps) + sweeps <= limit_;
  }
  bool exhausted() const { return limit_ >= 0 && used_.load() >= limit_; }

 private:
  std::int64_t limit_;
  std::atomic<std::int64_t> used_{0};
};

inline fs::path chain_record_path(const fs::path& dir, std::size_t flat) {
  return dir / "chains" / (std::to_string(flat) + ".json");
}

inline fs::path chain_progress_path(const fs::path& dir, std::size_t flat) {
  return dir / "chains" / (std::to_string(flat) + ".progress");
}

/// Runs (or continues) one chain. Returns false if stopped by the budget.
inline bool run_chain(const SweepConfig& cfg, const ChainTask& task, const fs::path& dir,
                      const std::string& config_hash, StopBudget& budget, std::mutex& io) {
  const ModelParams p = cfg.params_for(task.size, task.alpha);
  RunPlan plan = cfg.plan_for(p);
  if (plan.burn_in_sweeps == kAutoBurnIn) plan.burn_in_sweeps = auto_burn_in(p, cfg.master_seed, task.flat);
  const auto progress_file = chain_progress_path(dir, task.flat);

  std::optional<Engine> engine;
  ObservableSeries series;
  if (fs::exists(progress_file)) {
    const std::string raw = read_text_file(progress_file);
    ByteReader r({reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()});
    r.verify_seal();
    r.expect_tag(kProgressMagic);
    engine.emplace(Engine::read_checkpoint(r));
    if (engine->params() != p || engine->chain_index() != task.flat || engine->master_seed() != cfg.master_seed)
      throw CheckpointError("progress file " + progress_file.string() + " belongs to another chain");
    series = engine->empty_series(plan);
    series.deserialize(r);
    series.meta.sweeps_before_sampling = plan.burn_in_sweeps;
  } else {
    engine.emplace(p, cfg.master_seed, task.flat);
    series = engine->empty_series(plan);
  }

  auto save = [&] {
    const auto bytes = encode_progress(*engine, series);
    std::lock_guard lock(io);
    write_file_atomic(progress_file, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  };

  // Burn-in, in chunks.
  while (engine->sweeps_done() < plan.burn_in_sweeps) {
    const auto chunk = std::min(cfg.checkpoint_every, plan.burn_in_sweeps - engine->sweeps_done());
    if (!budget.consume(chunk)) {
      save();
      return false;
    }
    engine->equilibrate(chunk);
    if (engine->sweeps_done() < plan.burn_in_sweeps) save();
  }
  series.meta.sweeps_before_sampling = plan.burn_in_sweeps;

  // Sampling, in chunks of whole samples.
  const std::int64_t per_chunk = std::max<std::int64_t>(1, cfg.checkpoint_every / plan.thinning);
  while (static_cast<std::int64_t>(series.size()) < plan.n_samples) {
    const auto n = std::min(per_chunk, plan.n_samples - static_cast<std::int64_t>(series.size()));
    if (!budget.consume(n * plan.thinning)) {
      save();
      return false;
    }
    engine->sample_into(series, plan, n);
    if (static_cast<std::int64_t>(series.size()) < plan.n_samples) save();
  }

  const RunSummary summary = summarize(series);
  nlohmann::json rec = summary_record(series, summary);
  rec["N"] = p.Nx;
  rec["Ntau"] = p.Ntau;
  rec["alpha"] = p.alpha;
  rec["replica"] = task.replica;
  rec["flat_index"] = task.flat;
  rec["chain_seed"] = derive_stream_seed(cfg.master_seed, task.flat);
  rec["config_hash"] = config_hash;
  {
    std::lock_guard lock(io);
    write_file_atomic(chain_record_path(dir, task.flat), rec.dump() + '\n');
    std::error_code ec;
    fs::remove(progress_file, ec);
  }
  return true;
}

inline ChainRow row_from_record(const nlohmann::json& rec) {
  ChainRow r;
  r.Nx = rec.at("N").get<int>();
  r.Ntau = rec.at("Ntau").get<int>();
  r.alpha = rec.at("alpha").get<double>();
  r.replica = rec.at("replica").get<int>();
  r.chi = rec.at("chi").at("mean").get<double>();
  r.chi_err = rec.at("chi").at("err").get<double>();
  if (!rec.at("Ne").is_null()) {
    r.Ne = rec.at("Ne").at("mean").get<double>();
    r.Ne_err = rec.at("Ne").at("err").get<double>();
  }
  return r;
}

inline bool row_less(const ChainRow& a, const ChainRow& b) {
  return std::tie(a.Nx, a.Ntau, a.alpha, a.replica) < std::tie(b.Nx, b.Ntau, b.alpha, b.replica);
}

/// Final single-threaded pass: results.jsonl, merged.csv, summary.csv.
inline void write_merged_outputs(const SweepConfig& cfg, const fs::path& dir) {
  std::vector<std::pair<ChainRow, std::string>> rows;
  for (const auto& task : enumerate_chains(cfg)) {
    const auto text = read_text_file(chain_record_path(dir, task.flat));
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("corrupt chain record " + std::to_string(task.flat) + ": " + e.what());
    }
    rows.emplace_back(row_from_record(rec), rec.dump());
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return row_less(a.first, b.first); });

  std::string jsonl, csv = merged_csv_header();
  for (const auto& [row, rec] : rows) {
    jsonl += rec + '\n';
    csv += merged_csv_line(row);
  }
  write_if_changed(dir / "results.jsonl", jsonl);
  write_if_changed(dir / "merged.csv", csv);

  std::string summary = "N,Ntau,alpha,chi,chi_err,Ne,Ne_err,replicas_consistent\n";
  for (std::size_t k = 0; k < rows.size();) {
    std::size_t end = k;
    std::vector<double> chi, chie, ne, nee;
    while (end < rows.size() && rows[end].first.Nx == rows[k].first.Nx &&
           rows[end].first.Ntau == rows[k].first.Ntau && rows[end].first.alpha == rows[k].first.alpha) {
      chi.push_back(rows[end].first.chi);
      chie.push_back(rows[end].first.chi_err);
      ne.push_back(rows[end].first.Ne);
      nee.push_back(rows[end].first.Ne_err);
      ++end;
    }
    const auto mc = inverse_variance_merge(chi, chie);
    const auto mn = inverse_variance_merge(ne, nee);
    const auto& r0 = rows[k].first;
    summary += std::to_string(r0.Nx) + ',' + std::to_string(r0.Ntau) + ',' + fmt_double(r0.alpha) + ',' +
               fmt_double(mc.mean) + ',' + fmt_double(mc.err) + ',' + fmt_double(mn.mean) + ',' +
               fmt_double(mn.err) + ',' + ((mc.consistent && mn.consistent) ? "1" : "0") + '\n';
    k = end;
  }
  write_if_changed(dir / "summary.csv", summary);
}

}  // namespace detail

/// Runs every chain of the sweep that has no record yet in output_dir.
inline SweepOutcome run_sweep(const SweepConfig& cfg, const SweepOptions& opt = {}) {
  cfg.validate();
  const fs::path dir(cfg.output_dir);
  const std::string hash = cfg.hash();

  // Pre-flight budget check for every chain before any work starts.
  for (const auto& sz : cfg.sizes)
    for (double a : cfg.alpha_grid) {
      const auto p = cfg.params_for(sz, a);
      const auto plan = cfg.plan_for(p);
      if (plan.estimated_cost(p) > plan.max_proposals)
        throw BudgetError("sweep refused: chain (Nx=" + std::to_string(p.Nx) + ", Ntau=" +
                          std::to_string(p.Ntau) + ", alpha=" + fmt_double(a) +
                          ") exceeds max_proposals");
    }

  std::error_code ec;
  fs::create_directories(dir / "chains", ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());

  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    const auto existing = read_json_file(manifest_path);
    if (existing.value("config_hash", std::string{}) != hash)
      throw ConfigError("output directory " + dir.string() + " holds a different sweep (config hash " +
                        existing.value("config_hash", std::string{"?"}) + ")");
  } else {
    const nlohmann::json manifest{{"config", cfg.canonical()}, {"config_hash", hash}, {"version", kVersion}};
    try {
      write_file_atomic(manifest_path, manifest.dump(2) + '\n');
    } catch (const std::exception& e) {
      throw ConfigError(std::string("output directory not writable: ") + e.what());
    }
  }

  const auto tasks = detail::enumerate_chains(cfg);
  std::vector<detail::ChainTask> todo;
  SweepOutcome outcome;
  for (const auto& t : tasks) {
    if (fs::exists(detail::chain_record_path(dir, t.flat)))
      ++outcome.chains_skipped;
    else
      todo.push_back(t);
  }
  outcome.merged_csv = dir / "merged.csv";

  detail::StopBudget budget(opt.stop_after_sweeps);
  std::mutex io;
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> finished{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= todo.size()) return;
      {
        std::lock_guard lock(failure_mutex);
        if (failure) return;
      }
      try {
        if (detail::run_chain(cfg, todo[k], dir, hash, budget, io)) ++finished;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  {
    const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), std::max<std::size_t>(todo.size(), 1));
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_threads; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  outcome.chains_run = finished.load();
  outcome.complete = outcome.chains_skipped + outcome.chains_run == tasks.size();
  if (outcome.complete) detail::write_merged_outputs(cfg, dir);
  return outcome;
}

/// Re-reads the config stored in output_dir/manifest.json.
inline SweepConfig load_manifest_config(const fs::path& dir, int workers = 1) {
  const auto manifest = read_json_file(dir / "manifest.json");
  SweepConfig c = sweep_config_from_json(manifest.at("config"));
  c.workers = workers;
  c.output_dir = dir.string();
  return c;
}

}  // namespace qcm
