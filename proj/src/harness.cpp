#include "fdi/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "fdi/error.hpp"
#include "fdi/simulator.hpp"
#include "fdi/sparse_attack.hpp"
#include "fdi/spiked_rmt.hpp"
#include "fdi/state_estimation.hpp"

namespace fdi {

using nlohmann::json;

const char* const kArtifactVersion = "1.0.0";

namespace {

const std::pair<ExperimentKind, const char*> kExperimentNames[] = {
    {ExperimentKind::projection_accuracy, "projection_accuracy"},
    {ExperimentKind::eigenmode_detection, "eigenmode_detection"},
    {ExperimentKind::attack_comparison, "attack_comparison"},
    {ExperimentKind::statevar_sweep, "statevar_sweep"},
    {ExperimentKind::tradeoff, "tradeoff"},
    {ExperimentKind::mp_check, "mp_check"},
    {ExperimentKind::fp_calibration, "fp_calibration"},
};

}  // namespace

std::string to_string(ExperimentKind kind) {
  for (const auto& [k, name] : kExperimentNames)
    if (k == kind) return name;
  return "unknown";
}

ExperimentKind experiment_from_string(const std::string& s) {
  for (const auto& [k, name] : kExperimentNames)
    if (s == name) return k;
  throw ParseError("unknown experiment '" + s + "'");
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (case_path.empty() && !(experiment == ExperimentKind::mp_check && mp_dimension > 0))
    throw ParseError("config: case_path is required");
  if (case_format != "matpower" && case_format != "native" && case_format != "auto")
    throw ParseError("config: case_format must be matpower or native");
  if (!(sigma_n > 0.0)) throw ParseError("config: sigma_n must be positive");
  if (!(sigma_theta >= 0.0)) throw ParseError("config: sigma_theta must be nonnegative");
  if (p_ratios.empty()) throw ParseError("config: p_ratios must not be empty");
  for (double p : p_ratios)
    if (!(p > 0.0)) throw ParseError("config: every p_ratio must be positive");
  if (!(tau > 0.0)) throw ParseError("config: tau must be positive");
  if (!(fp_rate > 0.0 && fp_rate < 1.0)) throw ParseError("config: fp_rate must lie in (0, 1)");
  if (trials < 1) throw ParseError("config: trials must be at least 1");
  for (double r : sigma_ratios)
    if (!(r >= 0.0)) throw ParseError("config: sigma_ratios must be nonnegative");
  if (mp_dimension < 0) throw ParseError("config: mp_dimension must be nonnegative");
  if (!(spike_margin >= 0.0)) throw ParseError("config: spike_margin must be nonnegative");
  if (!(eps_zero > 0.0)) throw ParseError("config: eps_zero must be positive");
}

namespace {

const std::set<std::string> kRequiredKeys = {"case_path", "sigma_n",  "sigma_theta",
                                             "p_ratios",  "tau",      "fp_rate",
                                             "trials",    "master_seed", "experiment"};
const std::set<std::string> kOptionalKeys = {"case_format",    "sigma_ratios", "mp_dimension",
                                             "reuse_subspace", "spike_margin", "eps_zero",
                                             "estimate_sigma_n"};

template <typename T>
T get_as(const json& doc, const std::string& key) {
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw ParseError("config: /" + key + " has the wrong type");
  }
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("config: expected a JSON object");
  for (const auto& [key, _] : doc.items())
    if (!kRequiredKeys.count(key) && !kOptionalKeys.count(key))
      throw ParseError("config: unknown key '" + key + "'");
  for (const auto& key : kRequiredKeys)
    if (!doc.contains(key)) throw ParseError("config: missing key '" + key + "'");

  ExperimentConfig c;
  c.case_path = get_as<std::string>(doc, "case_path");
  c.sigma_n = get_as<double>(doc, "sigma_n");
  c.sigma_theta = get_as<double>(doc, "sigma_theta");
  c.p_ratios = get_as<std::vector<double>>(doc, "p_ratios");
  c.tau = get_as<double>(doc, "tau");
  c.fp_rate = get_as<double>(doc, "fp_rate");
  if (!doc["trials"].is_number_integer()) throw ParseError("config: /trials must be an integer");
  c.trials = get_as<int>(doc, "trials");
  if (!doc["master_seed"].is_number_unsigned())
    throw ParseError("config: /master_seed must be a nonnegative integer");
  c.master_seed = get_as<std::uint64_t>(doc, "master_seed");
  c.experiment = experiment_from_string(get_as<std::string>(doc, "experiment"));
  if (doc.contains("case_format")) c.case_format = get_as<std::string>(doc, "case_format");
  if (doc.contains("sigma_ratios")) c.sigma_ratios = get_as<std::vector<double>>(doc, "sigma_ratios");
  if (doc.contains("mp_dimension")) c.mp_dimension = get_as<int>(doc, "mp_dimension");
  if (doc.contains("reuse_subspace")) c.reuse_subspace = get_as<bool>(doc, "reuse_subspace");
  if (doc.contains("spike_margin")) c.spike_margin = get_as<double>(doc, "spike_margin");
  if (doc.contains("eps_zero")) c.eps_zero = get_as<double>(doc, "eps_zero");
  if (doc.contains("estimate_sigma_n")) c.estimate_sigma_n = get_as<bool>(doc, "estimate_sigma_n");
  c.validate();
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  json doc;
  doc["case_path"] = c.case_path;
  doc["case_format"] = c.case_format;
  doc["sigma_n"] = c.sigma_n;
  doc["sigma_theta"] = c.sigma_theta;
  doc["p_ratios"] = c.p_ratios;
  doc["tau"] = c.tau;
  doc["fp_rate"] = c.fp_rate;
  doc["trials"] = c.trials;
  doc["master_seed"] = c.master_seed;
  doc["experiment"] = to_string(c.experiment);
  doc["sigma_ratios"] = c.sigma_ratios;
  doc["mp_dimension"] = c.mp_dimension;
  doc["reuse_subspace"] = c.reuse_subspace;
  doc["spike_margin"] = c.spike_margin;
  doc["eps_zero"] = c.eps_zero;
  doc["estimate_sigma_n"] = c.estimate_sigma_n;
  return doc.dump(2) + "\n";
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentConfig c = config_from_json(buf.str());
  // Relative case paths are taken relative to the config file.
  const std::filesystem::path cp(c.case_path);
  if (!c.case_path.empty() && cp.is_relative())
    c.case_path = (std::filesystem::path(path).parent_path() / cp).lexically_normal().string();
  return c;
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_to_json(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Parallel trials
// ---------------------------------------------------------------------------

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  if (count <= 0) return;
  if (threads <= 1 || count == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  int failed_index = count;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        // Keep the lowest failing index so the surfaced error does not depend on scheduling.
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min(threads, count);
  for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::uint64_t trial_seed(std::uint64_t master, int grid_point, int trial) {
  return derive_seed(derive_seed(master, static_cast<std::uint64_t>(grid_point)),
                     static_cast<std::uint64_t>(trial));
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

struct Context {
  MeasurementMatrix h;
  StateVector theta_bar;
  StateEstimator estimator;
  BddConfig bdd;
  int m = 0;
  int n = 0;

  Context(MeasurementMatrix hm, StateVector tb, const ExperimentConfig& cfg)
      : h(std::move(hm)), theta_bar(std::move(tb)), estimator(h.h),
        bdd(calibrate_bdd(static_cast<int>(h.rows()), static_cast<int>(h.cols()), cfg.fp_rate, cfg.sigma_n)),
        m(static_cast<int>(h.rows())), n(static_cast<int>(h.cols())) {}
};

std::unique_ptr<Context> make_context(const ExperimentConfig& cfg, const RunOptions& options) {
  GridCase loaded;
  const GridCase* grid = options.grid;
  if (!grid) {
    loaded = load_case(cfg.case_path, cfg.case_format);
    grid = &loaded;
  }
  return std::make_unique<Context>(build_measurement_matrix(*grid), dc_power_flow(*grid), cfg);
}

int horizon_for(int m, double p) {
  return std::max(2, static_cast<int>(std::lround(static_cast<double>(m) / p)));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

struct Snapshot {
  Eigen::VectorXd z;
  Eigen::VectorXd theta;
};

Snapshot eval_snapshot(const Context& ctx, double sigma_theta, double sigma_n, std::uint64_t seed) {
  GaussianStream stream(derive_seed(seed, 1));
  auto [z, theta] = draw_snapshot(ctx.h, ctx.theta_bar, sigma_theta, sigma_n, NoiseShape::gaussian, stream);
  return {std::move(z), std::move(theta)};
}

SpikedEstimate learn(const Context& ctx, const ExperimentConfig& cfg, double sigma_theta, int horizon,
                     std::uint64_t seed, int keep_modes) {
  TraceConfig tc;
  tc.sigma_theta = sigma_theta;
  tc.sigma_n = cfg.sigma_n;
  tc.horizon_T = horizon;
  tc.seed = derive_seed(seed, 0);
  const MeasurementTrace trace = generate_trace(ctx.h, ctx.theta_bar, tc);
  LearnOptions lo;
  lo.spike_margin = cfg.spike_margin;
  lo.keep_modes = keep_modes;
  lo.estimate_sigma_n = cfg.estimate_sigma_n;
  return learn_subspace(trace.z, cfg.sigma_n, lo);
}

/// Learns per trial, or once per grid point when the config asks to reuse the subspace.
class Learner {
public:
  Learner(const Context& ctx, const ExperimentConfig& cfg, double sigma_theta, int horizon, int grid_point,
          int keep_modes)
      : ctx_(ctx), cfg_(cfg), sigma_theta_(sigma_theta), horizon_(horizon), grid_point_(grid_point),
        keep_(keep_modes) {
    if (cfg.reuse_subspace) {
      shared_ = learn(ctx, cfg, sigma_theta, horizon,
                      derive_seed(cfg.master_seed ^ 0x5ca1ab1e5eedULL, static_cast<std::uint64_t>(grid_point)),
                      keep_modes);
    }
  }

  SpikedEstimate operator()(int trial) const {
    if (cfg_.reuse_subspace) return shared_;
    return learn(ctx_, cfg_, sigma_theta_, horizon_, trial_seed(cfg_.master_seed, grid_point_, trial), keep_);
  }

private:
  const Context& ctx_;
  const ExperimentConfig& cfg_;
  double sigma_theta_;
  int horizon_;
  int grid_point_;
  int keep_;
  SpikedEstimate shared_;
};

double median(std::vector<double> v) {
  if (v.empty()) return NAN;
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return NAN;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void add_s_stats(ReportRow& row, const std::vector<int>& s) {
  row.s_observed = s;
  if (s.empty()) return;
  std::vector<double> d(s.begin(), s.end());
  row.metrics["s_median"] = median(d);
  row.metrics["s_min"] = *std::min_element(s.begin(), s.end());
  row.metrics["s_max"] = *std::max_element(s.begin(), s.end());
  std::map<int, int> counts;
  for (int x : s) ++counts[x];
  int mode = counts.begin()->first;
  int best = 0;
  for (const auto& [value, count] : counts) {
    if (count > best) {
      best = count;
      mode = value;
    }
  }
  row.metrics["s_mode"] = mode;
}

/// eta = ||theta_hat_a - theta|| / ||theta_hat - theta||.
double eta(const Context& ctx, const Snapshot& snap, const Eigen::VectorXd& a) {
  const Eigen::VectorXd base = ctx.estimator.estimate(snap.z) - snap.theta;
  const Eigen::VectorXd hit = ctx.estimator.estimate(snap.z + a) - snap.theta;
  return hit.norm() / base.norm();
}

struct AttackTally {
  int trials = 0;
  int alarms = 0;
  std::vector<double> predicted;
  std::vector<double> etas;

  void add(bool alarm, double pred, double e) {
    ++trials;
    alarms += alarm ? 1 : 0;
    predicted.push_back(pred);
    if (std::isfinite(e)) etas.push_back(e);
  }

  void fill(ReportRow& row) const {
    row.trials = trials;
    if (trials > 0) {
      row.empirical_detection_prob = static_cast<double>(alarms) / trials;
      row.predicted_detection_prob = mean(predicted);
    }
    if (!etas.empty()) {
      row.eta_median = median(etas);
      row.eta_mean = mean(etas);
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// --- projection_accuracy ---------------------------------------------------

void run_projection(const Context& ctx, const ExperimentConfig& cfg, const RunOptions& opt,
                    DetectionReport& report) {
  // Population eigenvectors: those of H H' (sigma'^2 H H' + I has the same eigenvectors).
  const EigenDecomposition truth = sym_eig(ctx.h.h * ctx.h.h.transpose());
  const Eigen::MatrixXd u_true = truth.eigenvectors.leftCols(ctx.n);

  for (std::size_t g = 0; g < cfg.p_ratios.size(); ++g) {
    const auto t0 = Clock::now();
    const double p = cfg.p_ratios[g];
    const int horizon = horizon_for(ctx.m, p);
    const Learner learner(ctx, cfg, cfg.sigma_theta, horizon, static_cast<int>(g), ctx.n);

    struct Outcome {
      int s = 0;
      Eigen::VectorXd omega;
      Eigen::MatrixXd overlap;  // |u_hat_i' u_j|^2, n x n
    };
    std::vector<Outcome> out(static_cast<std::size_t>(cfg.trials));
    parallel_for(cfg.trials, opt.threads, [&](int t) {
      const SpikedEstimate est = learner(t);
      Outcome& o = out[static_cast<std::size_t>(t)];
      o.s = est.s;
      o.omega = est.omega_hat;
      o.overlap = (est.u_hat.leftCols(ctx.n).transpose() * u_true).array().square();
    });

    std::vector<int> s_obs;
    for (const auto& o : out) s_obs.push_back(o.s);
    ReportRow summary;
    summary.experiment = "projection_accuracy";
    summary.label = "p=" + fmt(p);
    summary.parameters = {{"p", p}, {"T", horizon}, {"sigma_ratio", cfg.sigma_theta / cfg.sigma_n}};
    summary.trials = cfg.trials;
    add_s_stats(summary, s_obs);

    // Cross-mode leakage between recoverable modes.
    double worst_cross = 0.0;
    for (int i = 0; i < ctx.n; ++i) {
      for (int j = 0; j < ctx.n; ++j) {
        if (i == j) continue;
        double sum = 0.0;
        int cnt = 0;
        for (const auto& o : out) {
          if (i < o.s && j < o.s) {
            sum += o.overlap(i, j);
            ++cnt;
          }
        }
        if (cnt > 0) worst_cross = std::max(worst_cross, sum / cnt);
      }
    }
    summary.metrics["max_mean_cross_projection"] = worst_cross;
    summary.wall_time = seconds_since(t0);
    report.rows.push_back(summary);

    for (int i = 0; i < ctx.n; ++i) {
      ReportRow row;
      row.experiment = "projection_accuracy";
      row.label = "p=" + fmt(p) + "/mode=" + std::to_string(i + 1);
      row.parameters = {{"p", p}, {"T", horizon}, {"mode", i + 1}};
      row.trials = cfg.trials;
      std::vector<double> proj;
      std::vector<double> om;
      for (const auto& o : out) {
        proj.push_back(o.overlap(i, i));
        if (i < o.s) om.push_back(o.omega(i));
      }
      row.metrics["mean_projection"] = mean(proj);
      row.metrics["omega_trials"] = static_cast<double>(om.size());
      if (!om.empty()) row.metrics["mean_omega_hat"] = mean(om);
      row.wall_time = summary.wall_time;
      report.rows.push_back(row);
    }
  }
}

// --- eigenmode_detection ---------------------------------------------------

void run_eigenmodes(const Context& ctx, const ExperimentConfig& cfg, const RunOptions& opt,
                    DetectionReport& report) {
  const AttackerStateVarEstimate sv{cfg.sigma_theta};
  for (std::size_t g = 0; g < cfg.p_ratios.size(); ++g) {
    const auto t0 = Clock::now();
    const double p = cfg.p_ratios[g];
    const int horizon = horizon_for(ctx.m, p);
    const Learner learner(ctx, cfg, cfg.sigma_theta, horizon, static_cast<int>(g), ctx.n);

    struct Outcome {
      int s = 0;
      std::vector<char> alarm;
      std::vector<double> predicted;
      std::vector<double> eta;
    };
    std::vector<Outcome> out(static_cast<std::size_t>(cfg.trials));
    parallel_for(cfg.trials, opt.threads, [&](int t) {
      const SpikedEstimate est = learner(t);
      Outcome& o = out[static_cast<std::size_t>(t)];
      o.s = est.s;
      if (est.s == 0) return;
      const Snapshot snap = eval_snapshot(ctx, cfg.sigma_theta, cfg.sigma_n, trial_seed(cfg.master_seed, static_cast<int>(g), t));
      for (int i = 1; i <= ctx.n; ++i) {
        const AttackVector a = eigenmode_attack_extended(est, i, ctx.n, cfg.tau, sv, ctx.bdd);
        o.alarm.push_back(ctx.estimator.detect(snap.z + a.a, ctx.bdd).alarm ? 1 : 0);
        o.predicted.push_back(a.predicted_detection_prob);
        o.eta.push_back(eta(ctx, snap, a.a));
      }
    });
    const double wall = seconds_since(t0);

    std::vector<int> s_obs;
    int empty = 0;
    for (const auto& o : out) {
      s_obs.push_back(o.s);
      if (o.s == 0) ++empty;
    }
    const std::map<std::string, double> base = {{"p", p}, {"T", horizon}, {"tau", cfg.tau}};

    ReportRow summary;
    summary.experiment = "eigenmode_detection";
    summary.label = "p=" + fmt(p);
    summary.parameters = base;
    summary.trials = cfg.trials;
    summary.no_subspace_trials = empty;
    add_s_stats(summary, s_obs);
    summary.wall_time = wall;
    report.rows.push_back(summary);

    AttackTally within;
    AttackTally beyond;
    for (int i = 1; i <= ctx.n; ++i) {
      AttackTally tally;
      int beyond_count = 0;
      for (const auto& o : out) {
        if (o.s == 0) continue;
        const std::size_t k = static_cast<std::size_t>(i - 1);
        tally.add(o.alarm[k], o.predicted[k], o.eta[k]);
        (i <= o.s ? within : beyond).add(o.alarm[k], o.predicted[k], o.eta[k]);
        if (i > o.s) ++beyond_count;
      }
      ReportRow row;
      row.experiment = "eigenmode_detection";
      row.label = "p=" + fmt(p) + "/mode=" + std::to_string(i);
      row.parameters = base;
      row.parameters["mode"] = i;
      row.no_subspace_trials = empty;
      tally.fill(row);
      row.metrics["beyond_s_trials"] = beyond_count;
      row.wall_time = wall;
      report.rows.push_back(row);
    }
    for (auto [name, tally] : {std::pair{"within_s", &within}, std::pair{"beyond_s", &beyond}}) {
      ReportRow row;
      row.experiment = "eigenmode_detection";
      row.label = "p=" + fmt(p) + "/" + name;
      row.parameters = base;
      row.no_subspace_trials = empty;
      tally->fill(row);
      row.wall_time = wall;
      report.rows.push_back(row);
    }
  }
}

// --- attack_comparison / statevar_sweep ------------------------------------

struct ComparisonOutcome {
  int s = 0;
  bool possible = false;
  bool alarm_opt = false;
  bool alarm_full = false;
  double pred_opt = 0.0;
  double pred_full = 0.0;
  double eta_opt = 0.0;
  double eta_full = 0.0;
};

std::vector<ComparisonOutcome> compare_attacks(const Context& ctx, const ExperimentConfig& cfg,
                                               const RunOptions& opt, double sigma_theta, double p,
                                               int grid_point, bool with_full) {
  const int horizon = horizon_for(ctx.m, p);
  const Learner learner(ctx, cfg, sigma_theta, horizon, grid_point, with_full ? ctx.n : 0);
  std::vector<ComparisonOutcome> out(static_cast<std::size_t>(cfg.trials));
  parallel_for(cfg.trials, opt.threads, [&](int t) {
    const SpikedEstimate est = learner(t);
    ComparisonOutcome& o = out[static_cast<std::size_t>(t)];
    o.s = est.s;
    if (est.s == 0 || !(sigma_theta > 0.0)) return;
    o.possible = true;
    const AttackerStateVarEstimate sv{sigma_theta};
    const Snapshot snap = eval_snapshot(ctx, sigma_theta, cfg.sigma_n, trial_seed(cfg.master_seed, grid_point, t));
    const AttackVector a1 = optimal_attack(est, cfg.tau, sv, ctx.bdd);
    o.alarm_opt = ctx.estimator.detect(snap.z + a1.a, ctx.bdd).alarm;
    o.pred_opt = a1.predicted_detection_prob;
    o.eta_opt = eta(ctx, snap, a1.a);
    if (with_full) {
      const AttackVector a2 = full_subspace_attack(est, ctx.n, cfg.tau, sv, ctx.bdd);
      o.alarm_full = ctx.estimator.detect(snap.z + a2.a, ctx.bdd).alarm;
      o.pred_full = a2.predicted_detection_prob;
      o.eta_full = eta(ctx, snap, a2.a);
    }
  });
  return out;
}

void run_comparison(const Context& ctx, const ExperimentConfig& cfg, const RunOptions& opt,
                    DetectionReport& report) {
  for (std::size_t g = 0; g < cfg.p_ratios.size(); ++g) {
    const auto t0 = Clock::now();
    const double p = cfg.p_ratios[g];
    const auto out = compare_attacks(ctx, cfg, opt, cfg.sigma_theta, p, static_cast<int>(g), true);
    const double wall = seconds_since(t0);

    std::vector<int> s_obs;
    AttackTally opt_tally;
    AttackTally full_tally;
    int empty = 0;
    for (const auto& o : out) {
      s_obs.push_back(o.s);
      if (!o.possible) {
        ++empty;
        continue;
      }
      opt_tally.add(o.alarm_opt, o.pred_opt, o.eta_opt);
      full_tally.add(o.alarm_full, o.pred_full, o.eta_full);
    }
    const std::map<std::string, double> base = {{"p", p}, {"T", horizon_for(ctx.m, p)}, {"tau", cfg.tau}};
    ReportRow summary;
    summary.experiment = "attack_comparison";
    summary.label = "p=" + fmt(p);
    summary.parameters = base;
    summary.trials = cfg.trials;
    summary.no_subspace_trials = empty;
    add_s_stats(summary, s_obs);
    summary.wall_time = wall;
    report.rows.push_back(summary);
    for (auto [name, tally] : {std::pair{"optimal", &opt_tally}, std::pair{"full_subspace", &full_tally}}) {
      ReportRow row;
      row.experiment = "attack_comparison";
      row.label = "p=" + fmt(p) + "/" + name;
      row.parameters = base;
      row.no_subspace_trials = empty;
      tally->fill(row);
      row.wall_time = wall;
      report.rows.push_back(row);
    }
  }
}

void run_sweep(const Context& ctx, const ExperimentConfig& cfg, const std::vector<double>& ratios,
               const RunOptions& opt, DetectionReport& report) {
  const double p = cfg.p_ratios.front();
  for (std::size_t g = 0; g < ratios.size(); ++g) {
    const auto t0 = Clock::now();
    const double r = ratios[g];
    if (!(r >= 0.0)) throw std::invalid_argument("statevar_sweep: ratios must be nonnegative");
    const auto out = compare_attacks(ctx, cfg, opt, r * cfg.sigma_n, p, static_cast<int>(g), false);
    ReportRow row;
    row.experiment = "statevar_sweep";
    row.label = "ratio=" + fmt(r) + "/optimal";
    row.parameters = {{"p", p}, {"T", horizon_for(ctx.m, p)}, {"tau", cfg.tau}, {"sigma_ratio", r}};
    AttackTally tally;
    std::vector<int> s_obs;
    for (const auto& o : out) {
      s_obs.push_back(o.s);
      if (!o.possible) {
        ++row.no_subspace_trials;
        continue;
      }
      tally.add(o.alarm_opt, o.pred_opt, o.eta_opt);
    }
    tally.fill(row);
    add_s_stats(row, s_obs);
    row.wall_time = seconds_since(t0);
    report.rows.push_back(row);
  }
}

// --- tradeoff ----------------------------------------------------------------

void run_tradeoff(const Context& ctx, const ExperimentConfig& cfg, const RunOptions& opt,
                  DetectionReport& report) {
  const AttackerStateVarEstimate sv{cfg.sigma_theta};
  for (std::size_t g = 0; g < cfg.p_ratios.size(); ++g) {
    const auto t0 = Clock::now();
    const double p = cfg.p_ratios[g];
    const int horizon = horizon_for(ctx.m, p);
    const Learner learner(ctx, cfg, cfg.sigma_theta, horizon, static_cast<int>(g), 0);

    struct Outcome {
      int s = 0;
      std::vector<TradeoffPoint> points;
      std::vector<char> alarm;
    };
    std::vector<Outcome> out(static_cast<std::size_t>(cfg.trials));
    parallel_for(cfg.trials, opt.threads, [&](int t) {
      const SpikedEstimate est = learner(t);
      Outcome& o = out[static_cast<std::size_t>(t)];
      o.s = est.s;
      if (est.s == 0) return;
      const Snapshot snap = eval_snapshot(ctx, cfg.sigma_theta, cfg.sigma_n, trial_seed(cfg.master_seed, static_cast<int>(g), t));
      const DetectionOracle oracle = [&](const AttackVector& a) {
        return ctx.estimator.detect(snap.z + a.a, ctx.bdd).alarm ? 1.0 : 0.0;
      };
      o.points = tradeoff_curve(est, cfg.tau, sv, cfg.eps_zero, ctx.bdd, oracle).points;
    });
    const double wall = seconds_since(t0);

    std::vector<int> s_obs;
    int empty = 0;
    int monotone_violations = 0;
    int order_violations = 0;
    int max_s = 0;
    for (const auto& o : out) {
      s_obs.push_back(o.s);
      max_s = std::max(max_s, o.s);
      if (o.s == 0) {
        ++empty;
        continue;
      }
      for (std::size_t k = 1; k < o.points.size(); ++k)
        if (o.points[k].k_star > o.points[k - 1].k_star) {
          ++monotone_violations;
          break;
        }
      if (o.points.front().predicted_detection_prob > o.points.back().predicted_detection_prob + 1e-12)
        ++order_violations;
    }
    const std::map<std::string, double> base = {{"p", p}, {"T", horizon}, {"tau", cfg.tau}};
    ReportRow summary;
    summary.experiment = "tradeoff";
    summary.label = "p=" + fmt(p);
    summary.parameters = base;
    summary.trials = cfg.trials;
    summary.no_subspace_trials = empty;
    add_s_stats(summary, s_obs);
    summary.metrics["k_star_monotone_violations"] = monotone_violations;
    summary.metrics["predicted_order_violations"] = order_violations;
    summary.wall_time = wall;
    report.rows.push_back(summary);

    for (int m = 1; m <= max_s; ++m) {
      AttackTally tally;
      std::vector<double> k;
      for (const auto& o : out) {
        if (o.s < m) continue;
        const TradeoffPoint& pt = o.points[static_cast<std::size_t>(m - 1)];
        tally.add(pt.empirical_detection_prob.value_or(0.0) > 0.5, pt.predicted_detection_prob, NAN);
        k.push_back(pt.k_star);
      }
      ReportRow row;
      row.experiment = "tradeoff";
      row.label = "p=" + fmt(p) + "/m=" + std::to_string(m);
      row.parameters = base;
      row.parameters["m"] = m;
      tally.fill(row);
      row.metrics["k_star_mean"] = mean(k);
      row.metrics["k_star_min"] = *std::min_element(k.begin(), k.end());
      row.metrics["k_star_max"] = *std::max_element(k.begin(), k.end());
      row.metrics["sparsity_mean"] = ctx.m - mean(k);
      row.wall_time = wall;
      report.rows.push_back(row);
    }
  }
}

// --- mp_check --------------------------------------------------------------

void run_mp(int dimension, const ExperimentConfig& cfg, const RunOptions& opt, DetectionReport& report) {
  for (std::size_t g = 0; g < cfg.p_ratios.size(); ++g) {
    const auto t0 = Clock::now();
    const double p = cfg.p_ratios[g];
    const int horizon = horizon_for(dimension, p);
    const double p_eff = static_cast<double>(dimension) / horizon;
    const MpEdges edges = mp_edges(p_eff);

    struct Outcome {
      double lo = 0.0;
      double hi = 0.0;
      int spikes = 0;
    };
    std::vector<Outcome> out(static_cast<std::size_t>(cfg.trials));
    parallel_for(cfg.trials, opt.threads, [&](int t) {
      GaussianStream stream(derive_seed(trial_seed(cfg.master_seed, static_cast<int>(g), t), 0));
      Eigen::MatrixXd z(dimension, horizon);
      for (Eigen::Index c = 0; c < z.cols(); ++c) stream.fill(z.col(c));
      z *= cfg.sigma_n;
      const Eigen::MatrixXd cov = sample_covariance(z) / (cfg.sigma_n * cfg.sigma_n);
      const EigenDecomposition eig = sym_eig(cov);
      Outcome& o = out[static_cast<std::size_t>(t)];
      o.hi = eig.eigenvalues(0);
      // With p > 1 the spectrum carries an atom at zero; the bulk minimum is the smallest
      // eigenvalue among the rank-many nonzero ones.
      const Eigen::Index rank = std::min<Eigen::Index>(dimension, horizon - 1);
      o.lo = eig.eigenvalues(rank - 1);
      o.spikes = count_spikes(eig.eigenvalues, p_eff, 0.0);
    });

    ReportRow row;
    row.experiment = "mp_check";
    row.label = "p=" + fmt(p);
    row.parameters = {{"p", p_eff}, {"T", horizon}, {"M", dimension}};
    row.trials = cfg.trials;
    double lo = INFINITY;
    double hi = -INFINITY;
    int inside = 0;
    std::vector<int> spikes;
    for (const auto& o : out) {
      lo = std::min(lo, o.lo);
      hi = std::max(hi, o.hi);
      if (o.lo >= edges.a_minus - 0.1 && o.hi <= edges.b_plus + 0.1) ++inside;
      spikes.push_back(o.spikes);
    }
    row.s_observed = spikes;
    row.metrics = {{"a_minus", edges.a_minus}, {"b_plus", edges.b_plus}, {"min_eigenvalue", lo},
                   {"max_eigenvalue", hi},     {"trials_inside", inside}};
    row.wall_time = seconds_since(t0);
    report.rows.push_back(row);
  }
}

// --- fp_calibration ----------------------------------------------------------

void run_fp(const Context& ctx, const ExperimentConfig& cfg, const RunOptions& opt, DetectionReport& report) {
  const auto t0 = Clock::now();
  std::vector<char> alarm(static_cast<std::size_t>(cfg.trials));
  std::vector<double> resid(static_cast<std::size_t>(cfg.trials));
  parallel_for(cfg.trials, opt.threads, [&](int t) {
    const Snapshot snap = eval_snapshot(ctx, cfg.sigma_theta, cfg.sigma_n, trial_seed(cfg.master_seed, 0, t));
    const EstimationResult r = ctx.estimator.detect(snap.z, ctx.bdd);
    alarm[static_cast<std::size_t>(t)] = r.alarm ? 1 : 0;
    resid[static_cast<std::size_t>(t)] = r.residual_sq / (cfg.sigma_n * cfg.sigma_n);
  });
  ReportRow row;
  row.experiment = "fp_calibration";
  row.label = "no_attack";
  row.parameters = {{"fp_rate", cfg.fp_rate}, {"df", ctx.bdd.df}};
  row.trials = cfg.trials;
  int count = 0;
  for (char a : alarm) count += a;
  row.empirical_detection_prob = static_cast<double>(count) / cfg.trials;
  row.predicted_detection_prob = cfg.fp_rate;
  row.metrics["mean_normalized_residual"] = mean(resid);
  row.metrics["threshold_normalized"] = ctx.bdd.normalized_threshold();
  row.wall_time = seconds_since(t0);
  report.rows.push_back(row);
}

Provenance provenance_for(const ExperimentConfig& cfg) {
  return {config_hash(cfg), cfg.master_seed, kArtifactVersion};
}

}  // namespace

DetectionReport run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate();
  DetectionReport report;
  report.provenance = provenance_for(cfg);

  if (cfg.experiment == ExperimentKind::mp_check && cfg.mp_dimension > 0) {
    run_mp(cfg.mp_dimension, cfg, options, report);
    return report;
  }
  const auto ctx = make_context(cfg, options);
  switch (cfg.experiment) {
    case ExperimentKind::projection_accuracy: run_projection(*ctx, cfg, options, report); break;
    case ExperimentKind::eigenmode_detection: run_eigenmodes(*ctx, cfg, options, report); break;
    case ExperimentKind::attack_comparison: run_comparison(*ctx, cfg, options, report); break;
    case ExperimentKind::statevar_sweep: run_sweep(*ctx, cfg, cfg.sigma_ratios, options, report); break;
    case ExperimentKind::tradeoff: run_tradeoff(*ctx, cfg, options, report); break;
    case ExperimentKind::mp_check: run_mp(ctx->m, cfg, options, report); break;
    case ExperimentKind::fp_calibration: run_fp(*ctx, cfg, options, report); break;
  }
  return report;
}

DetectionReport statevar_sweep(const ExperimentConfig& cfg, const std::vector<double>& ratios,
                               const RunOptions& options) {
  cfg.validate();
  DetectionReport report;
  report.provenance = provenance_for(cfg);
  const auto ctx = make_context(cfg, options);
  run_sweep(*ctx, cfg, ratios, options, report);
  return report;
}

const ReportRow* DetectionReport::find(const std::string& experiment, const std::string& label) const {
  for (const auto& r : rows)
    if (r.experiment == experiment && r.label == label) return &r;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

double round10(double v) {
  if (!std::isfinite(v) || v == 0.0) return v;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9e", v);
  return std::strtod(buf, nullptr);
}

std::string num10(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

json real(double v) {
  if (!std::isfinite(v)) return nullptr;
  return round10(v);
}

json opt_real(const std::optional<double>& v) { return v ? real(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string kv(const std::map<std::string, double>& m) {
  std::string s;
  for (const auto& [k, v] : m) {
    if (!s.empty()) s += ';';
    s += k + "=" + num10(v);
  }
  return s;
}

}  // namespace

DetectionReport rounded(const DetectionReport& report) {
  DetectionReport r = report;
  auto fix = [](std::optional<double>& v) {
    if (v) v = round10(*v);
  };
  for (auto& row : r.rows) {
    for (auto& [_, v] : row.parameters) v = round10(v);
    for (auto& [_, v] : row.metrics) v = round10(v);
    fix(row.empirical_detection_prob);
    fix(row.predicted_detection_prob);
    fix(row.eta_median);
    fix(row.eta_mean);
    row.wall_time = round10(row.wall_time);
  }
  return r;
}

std::string report_to_json(const DetectionReport& report, bool include_timing) {
  json doc;
  doc["provenance"] = {{"config_hash", report.provenance.config_hash},
                       {"seed", report.provenance.seed},
                       {"artifact_version", report.provenance.artifact_version}};
  doc["rows"] = json::array();
  for (const auto& row : report.rows) {
    json r;
    r["experiment"] = row.experiment;
    r["label"] = row.label;
    json params = json::object();
    for (const auto& [k, v] : row.parameters) params[k] = real(v);
    r["parameters"] = params;
    r["trials"] = row.trials;
    r["no_subspace_trials"] = row.no_subspace_trials;
    r["empirical_detection_prob"] = opt_real(row.empirical_detection_prob);
    r["predicted_detection_prob"] = opt_real(row.predicted_detection_prob);
    r["eta_median"] = opt_real(row.eta_median);
    r["eta_mean"] = opt_real(row.eta_mean);
    r["s_observed"] = row.s_observed;
    json metrics = json::object();
    for (const auto& [k, v] : row.metrics) metrics[k] = real(v);
    r["metrics"] = metrics;
    if (include_timing) r["wall_time"] = real(row.wall_time);
    doc["rows"].push_back(std::move(r));
  }
  return doc.dump(2) + "\n";
}

DetectionReport report_from_json(const std::string& text) {
  DetectionReport report;
  try {
    const json doc = json::parse(text);
    const json& p = doc.at("provenance");
    report.provenance.config_hash = p.at("config_hash").get<std::string>();
    report.provenance.seed = p.at("seed").get<std::uint64_t>();
    report.provenance.artifact_version = p.at("artifact_version").get<std::string>();
    for (const json& r : doc.at("rows")) {
      ReportRow row;
      row.experiment = r.at("experiment").get<std::string>();
      row.label = r.at("label").get<std::string>();
      for (const auto& [k, v] : r.at("parameters").items()) row.parameters[k] = v.is_null() ? NAN : v.get<double>();
      row.trials = r.at("trials").get<int>();
      row.no_subspace_trials = r.at("no_subspace_trials").get<int>();
      row.empirical_detection_prob = opt_from(r.at("empirical_detection_prob"));
      row.predicted_detection_prob = opt_from(r.at("predicted_detection_prob"));
      row.eta_median = opt_from(r.at("eta_median"));
      row.eta_mean = opt_from(r.at("eta_mean"));
      row.s_observed = r.at("s_observed").get<std::vector<int>>();
      for (const auto& [k, v] : r.at("metrics").items()) row.metrics[k] = v.is_null() ? NAN : v.get<double>();
      if (r.contains("wall_time") && !r["wall_time"].is_null()) row.wall_time = r["wall_time"].get<double>();
      report.rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("report JSON: ") + e.what());
  }
  return report;
}

std::string report_to_csv(const DetectionReport& report, bool include_timing) {
  std::string s =
      "experiment,label,parameters,trials,no_subspace_trials,empirical_detection_prob,"
      "predicted_detection_prob,eta_median,eta_mean,s_median,metrics";
  if (include_timing) s += ",wall_time";
  s += "\n";
  auto opt = [](const std::optional<double>& v) { return v ? num10(*v) : std::string(); };
  for (const auto& row : report.rows) {
    std::optional<double> s_median;
    if (auto it = row.metrics.find("s_median"); it != row.metrics.end()) s_median = it->second;
    s += row.experiment + "," + row.label + "," + kv(row.parameters) + "," + std::to_string(row.trials) +
         "," + std::to_string(row.no_subspace_trials) + "," + opt(row.empirical_detection_prob) + "," +
         opt(row.predicted_detection_prob) + "," + opt(row.eta_median) + "," + opt(row.eta_mean) + "," +
         opt(s_median) + "," + kv(row.metrics);
    if (include_timing) s += "," + num10(row.wall_time);
    s += "\n";
  }
  return s;
}

void emit_report(const DetectionReport& report, const std::string& path, ReportFormat format,
                 bool include_timing) {
  const std::string text =
      format == ReportFormat::json ? report_to_json(report, include_timing) : report_to_csv(report, include_timing);
  if (path.empty() || path == "-") {
    std::fwrite(text.data(), 1, text.size(), stdout);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  out.close();
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace fdi
