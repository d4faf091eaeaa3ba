#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shelab/diagnostics.hpp"
#include "shelab/integrator.hpp"
#include "shelab/stats.hpp"

namespace shelab {

/// Flat key-value view of a configuration (keys domain.*, noise.*, sigma.*, run.*).
using Settings = std::map<std::string, std::string>;

struct ConfigKey {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Every accepted key with its default and a one-line description.
const std::vector<ConfigKey>& config_keys();

struct SimConfig {
  TrajectoryConfig trajectory;
  std::size_t paths = 100;
  std::uint64_t seed = 1;
  std::string output_dir = "shelab-out";
  std::size_t workers = 0;  // 0: one per hardware thread
  bool save_trajectories = false;
  double max_failure_fraction = 0.0;
  int doubling_floor = 0;  // m0 override; 0 derives it from M and the fitted C

  std::size_t worker_count() const;
};

/// Reads `key = value` lines; '#' starts a comment. Unknown keys, duplicate
/// keys and malformed lines throw Error(config) naming the line.
Settings parse_settings(std::istream& in, const std::string& origin);
Settings read_settings_file(const std::string& path);

/// Sets one key (used for CLI overrides); unknown keys throw Error(config).
void set_setting(Settings& settings, const std::string& key, const std::string& value);

/// Builds and eagerly validates a configuration. Missing keys take their
/// defaults. Errors name the offending key.
SimConfig build_config(const Settings& settings);
SimConfig parse_config(const std::string& path);

/// Normalized settings: every key that affects the run, numbers in shortest
/// round-trip form, kernel parameters only for the active kernel.
Settings to_settings(const SimConfig& config);
std::string canonical_text(const SimConfig& config);

/// 64-bit FNV-1a digest (16 hex digits) of the canonical text without
/// run.workers and run.output, plus the initial-data values.
std::string config_hash(const SimConfig& config);

/// Regime flag and critical exponent for the configured sigma and noise.
struct RegimeInfo {
  double beta = 0.0;
  double eta = 0.0;
  double gamma = 0.0;
  std::optional<double> gamma_c;
  SigmaRegime regime = SigmaRegime::unclassified;
};
RegimeInfo regime_info(const SimConfig& config);

struct EnsembleRow {
  std::uint64_t seed = 0;
  StopFlag stop = StopFlag::none;
  double stop_time = 0.0;
  double max_sup_norm = 0.0;
  double max_l1 = 0.0;
  double final_I = 0.0;
  double final_Q = 0.0;
  double clamped_fraction = 0.0;  // clamped mass / |u0|_{L1}
  std::size_t doubling_count = 0;  // completed up and down events
};

EnsembleRow summarize(const TrajectoryRecord& record, double l1_initial, int m0);

struct ThresholdExit {
  int level = 0;  // threshold 2^level
  std::size_t count = 0;
  double fraction = 0.0;
};

struct EnsembleAggregates {
  std::size_t paths = 0;
  std::size_t failures = 0;
  std::size_t stopped_tau_n = 0;
  std::size_t stopped_tau_M = 0;
  std::size_t stopped_horizon = 0;
  double l1_initial = 0.0;
  double mass_bound = 0.0;
  double truncation = 0.0;
  int m0 = 0;
  double explosion_exit_fraction = 0.0;  // stopped at tau_n
  MartingaleReport martingale;           // mean of I at the stop time
  DoobReport doob;                       // M in {2, 4, 8} |u0|_{L1}
  std::optional<QVReport> qv;            // Q at the stopping time, all finished paths
  std::vector<ThresholdExit> exits;      // paths whose sup-norm reached 2^m, m >= 1
  double mean_doubling_count = 0.0;
  double mean_clamped_fraction = 0.0;
};

/// Aggregates are pure functions of the rows and a few config constants.
EnsembleAggregates aggregate_rows(const std::vector<EnsembleRow>& rows, double l1_initial,
                                  double mass_bound, double truncation, int m0);

struct EnsembleMetrics {
  double wall_seconds = 0.0;
  double paths_per_second = 0.0;
  std::size_t workers = 0;
};

struct EnsembleResult {
  std::string config_hash;
  std::vector<EnsembleRow> rows;  // ordered by seed
  EnsembleAggregates aggregates;
  EnsembleMetrics metrics;
  std::vector<std::string> failure_messages;
};

/// Called once per finished trajectory from a worker thread, with the path
/// index. Implementations must only touch per-index state.
using TrajectoryObserver = std::function<void(std::size_t, const TrajectoryRecord&)>;

/// m0 used for doubling statistics: the explicit floor, or ceil(log2(C M)) + 2
/// with C from the heat-kernel fit.
int resolve_doubling_floor(const SimConfig& config);

EnsembleResult run_ensemble(const SimConfig& config, const TrajectoryObserver& observer = {});

void write_rows_csv(const EnsembleResult& result, std::ostream& out);
std::string aggregates_json(const EnsembleResult& result, const SimConfig& config);
std::string metrics_json(const EnsembleResult& result);

/// Writes rows.csv, ensemble.json and metrics.json into the output directory.
/// Per-trajectory CSVs (run.save_trajectories) are written by run_ensemble.
void write_ensemble(const EnsembleResult& result, const SimConfig& config);

struct LoadedEnsemble {
  std::string config_hash;
  std::vector<EnsembleRow> rows;
  std::string stored_aggregates;      // ensemble.json as written
  std::string recomputed_aggregates;  // rebuilt from rows
  bool consistent = false;
};

/// Reads rows.csv and ensemble.json from `dir` and recomputes the aggregates.
LoadedEnsemble load_ensemble(const std::string& dir);

std::vector<EnsembleRow> read_rows_csv(std::istream& in, std::string& config_hash);

struct SweepCell {
  double gamma = 0.0;
  SigmaRegime regime = SigmaRegime::unclassified;
  std::vector<ThresholdExit> exits;  // one per threshold
  std::vector<double> exit_standard_error;
  double mean_up_events_above_m0 = 0.0;
  double mean_clamped_fraction = 0.0;  // positivity diagnostic, large in the explosive regime
  std::size_t failures = 0;
};

struct SweepResult {
  std::string config_hash;
  std::vector<double> gammas;
  std::vector<int> threshold_levels;
  std::optional<double> gamma_c;
  int m0 = 0;
  std::size_t paths = 0;
  std::vector<SweepCell> cells;
  bool monotone_in_threshold = true;  // exact: nested events
};

/// Runs one ensemble per gamma with the same seeds (common random numbers).
/// Thresholds are dyadic levels m (threshold 2^m) and must not exceed the
/// truncation level.
SweepResult sweep_gamma(const SimConfig& config, const std::vector<double>& gammas,
                        const std::vector<int>& threshold_levels);

std::string sweep_json(const SweepResult& result);
void write_sweep_csv(const SweepResult& result, std::ostream& out);

enum class ClauseStatus { pass, fail, inapplicable };
std::string to_string(ClauseStatus s);

struct ClauseReport {
  ClauseStatus status = ClauseStatus::fail;
  std::string detail;
  double fitted = 0.0;    // fitted exponent (A: beta, B: eta) or value (C)
  double expected = 0.0;  // table value
};

struct AssumptionReport {
  std::string config_hash;
  ClauseReport heat_kernel;  // A
  ClauseReport noise_decay;  // B
  ClauseReport double_integral;  // C
  double c_fit = 0.0;
  RegimeInfo regime;
  bool all_pass = false;
};

struct HeatKernelFit {
  std::vector<double> t_grid;
  std::vector<double> values;
  stats::LineFit fit;
  double beta = 0.0;
  double c_fit = 0.0;
};

/// log-log fit of sup_x G(t, x, x) over t in [1e-4, 1e-2] on a fine 1D basis
/// with the same length and boundary (the kernel is a tensor product).
HeatKernelFit fit_heat_kernel(const DomainSpec& domain);

AssumptionReport verify_assumptions(const SimConfig& config);
std::string assumption_json(const AssumptionReport& report);

std::string probe_json(const MomentProbeReport& report, const std::string& config_hash);

}  // namespace shelab
