#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fdi/attack.hpp"
#include "fdi/case_io.hpp"

namespace fdi {

enum class ExperimentKind {
  projection_accuracy,
  eigenmode_detection,
  attack_comparison,
  statevar_sweep,
  tradeoff,
  mp_check,
  fp_calibration,
};

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_from_string(const std::string& s);

struct ExperimentConfig {
  std::string case_path;
  std::string case_format = "matpower";
  double sigma_n = 0.02;
  double sigma_theta = 0.002;
  std::vector<double> p_ratios{0.5};
  double tau = 0.3;  // ||delta theta||^2 / sigma_n^2
  double fp_rate = 0.02;
  int trials = 1000;
  std::uint64_t master_seed = 1;
  ExperimentKind experiment = ExperimentKind::attack_comparison;

  // Optional keys; absent from the file means the default below.
  std::vector<double> sigma_ratios{0.05, 0.1, 0.2};  // statevar_sweep grid of sigma_theta/sigma_n
  int mp_dimension = 0;         // mp_check sensor count; 0 uses the case's M
  bool reuse_subspace = false;  // learn once per grid point instead of once per trial
  double spike_margin = 0.0;
  double eps_zero = 1e-6;       // relative numerical zero for attack support
  bool estimate_sigma_n = false;

  void validate() const;
};

ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

struct ReportRow {
  std::string experiment;
  std::string label;
  std::map<std::string, double> parameters;
  int trials = 0;              // denominator of empirical_detection_prob
  int no_subspace_trials = 0;  // trials where s == 0 made the construction impossible
  std::optional<double> empirical_detection_prob;
  std::optional<double> predicted_detection_prob;
  std::optional<double> eta_median;
  std::optional<double> eta_mean;
  std::vector<int> s_observed;  // per trial, in trial order
  std::map<std::string, double> metrics;
  double wall_time = 0.0;  // seconds; emitted only on request so reports stay byte-stable

  bool operator==(const ReportRow&) const = default;
};

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string artifact_version;

  bool operator==(const Provenance&) const = default;
};

struct DetectionReport {
  std::vector<ReportRow> rows;
  Provenance provenance;

  const ReportRow* find(const std::string& experiment, const std::string& label) const;
  bool operator==(const DetectionReport&) const = default;
};

struct RunOptions {
  int threads = 1;
  /// Cached case; when null the case is loaded from cfg.case_path.
  const GridCase* grid = nullptr;
};

DetectionReport run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});
DetectionReport statevar_sweep(const ExperimentConfig& cfg, const std::vector<double>& ratios,
                               const RunOptions& options = {});

enum class ReportFormat { csv, json };

std::string report_to_json(const DetectionReport& report, bool include_timing = false);
std::string report_to_csv(const DetectionReport& report, bool include_timing = false);
DetectionReport report_from_json(const std::string& text);
/// Rounds every real value to the 10 significant digits used on disk.
DetectionReport rounded(const DetectionReport& report);
void emit_report(const DetectionReport& report, const std::string& path, ReportFormat format,
                 bool include_timing = false);

std::string config_hash(const ExperimentConfig& cfg);
extern const char* const kArtifactVersion;

/// Runs fn(i) for i in [0, count) on `threads` workers. fn must only touch its own slot.
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

/// Per-trial seed, independent of the total trial count.
std::uint64_t trial_seed(std::uint64_t master, int grid_point, int trial);

}  // namespace fdi
