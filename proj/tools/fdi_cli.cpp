// Command-line front end for the FDI toolkit.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fdi/attack.hpp"
#include "fdi/case_io.hpp"
#include "fdi/error.hpp"
#include "fdi/harness.hpp"
#include "fdi/simulator.hpp"
#include "fdi/sparse_attack.hpp"
#include "fdi/spiked_rmt.hpp"
#include "fdi/state_estimation.hpp"

namespace {

using namespace fdi;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<double> p;
  std::optional<double> tau;
  std::string out = "-";
  std::string format = "json";
  int threads = 1;
  bool reuse_subspace = false;
  bool timing = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Experiment config (JSON)")->required();
  cmd->add_option("--seed", o.seed, "Override master_seed");
  cmd->add_option("--trials", o.trials, "Override trials")->check(CLI::PositiveNumber);
  cmd->add_option("--p", o.p, "Override p_ratios with a single M/T value")->check(CLI::PositiveNumber);
  cmd->add_option("--tau", o.tau, "Override tau")->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out, "Output path, '-' for stdout");
  cmd->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"json", "csv"}));
  cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--reuse-subspace", o.reuse_subspace, "Learn one subspace per grid point");
  cmd->add_flag("--timing", o.timing, "Include wall_time in reports");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.master_seed = *o.seed;
  if (o.trials) cfg.trials = *o.trials;
  if (o.p) cfg.p_ratios = {*o.p};
  if (o.tau) cfg.tau = *o.tau;
  if (o.reuse_subspace) cfg.reuse_subspace = true;
  cfg.validate();
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_out(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::fwrite(text.data(), 1, text.size(), stdout);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

ReportFormat report_format(const std::string& f) { return f == "csv" ? ReportFormat::csv : ReportFormat::json; }

struct Model {
  MeasurementMatrix h;
  StateVector theta_bar;
  BddConfig bdd;
};

Model model_for(const ExperimentConfig& cfg) {
  std::vector<std::string> warnings;
  const GridCase g = load_case(cfg.case_path, cfg.case_format, &warnings);
  Model m{build_measurement_matrix(g), dc_power_flow(g), {}};
  m.bdd = calibrate_bdd(static_cast<int>(m.h.rows()), static_cast<int>(m.h.cols()), cfg.fp_rate, cfg.sigma_n);
  return m;
}

int horizon(const Model& m, double p) {
  return std::max(2, static_cast<int>(std::lround(static_cast<double>(m.h.rows()) / p)));
}

int run(int argc, char** argv) {
  CLI::App app{"Data-driven false-data-injection attacks on DC state estimation"};
  app.require_subcommand(1);

  // parse-case
  std::string case_path;
  std::string case_format = "auto";
  std::string case_out = "-";
  auto* parse_cmd = app.add_subcommand("parse-case", "Parse a case file and print it as native JSON");
  parse_cmd->add_option("path", case_path, "Case file")->required();
  parse_cmd->add_option("--case-format", case_format, "matpower, native or auto")
      ->check(CLI::IsMember({"auto", "matpower", "native"}));
  parse_cmd->add_option("--out", case_out, "Output path, '-' for stdout");

  Overrides sim_o, learn_o, attack_o, eval_o, trade_o, mp_o, report_o;

  auto* sim_cmd = app.add_subcommand("simulate", "Generate a learning trace of T = M/p snapshots");
  add_common(sim_cmd, sim_o);

  std::string learn_trace;
  int keep_modes = 0;
  auto* learn_cmd = app.add_subcommand("learn", "Learn the spiked subspace from a trace");
  add_common(learn_cmd, learn_o);
  learn_cmd->add_option("--trace", learn_trace, "Trace CSV (sidecar <trace>.meta.json is read if present)")->required();
  learn_cmd->add_option("--keep-modes", keep_modes, "Keep at least this many eigenvectors");

  std::string attack_est;
  std::string attack_kind = "optimal";
  int attack_mode = 1;
  int attack_m = 1;
  auto* attack_cmd = app.add_subcommand("attack", "Build an attack vector from a learned estimate");
  add_common(attack_cmd, attack_o);
  attack_cmd->add_option("--estimate", attack_est, "SpikedEstimate JSON")->required();
  attack_cmd->add_option("--kind", attack_kind, "optimal, eigenmode, full or sparse")
      ->check(CLI::IsMember({"optimal", "eigenmode", "full", "sparse"}));
  attack_cmd->add_option("--mode", attack_mode, "Mode index for --kind eigenmode")->check(CLI::PositiveNumber);
  attack_cmd->add_option("--m", attack_m, "Subspace dimension for --kind sparse")->check(CLI::PositiveNumber);

  std::string eval_attack;
  auto* eval_cmd = app.add_subcommand("evaluate", "Empirical detection rate of an attack against the true model");
  add_common(eval_cmd, eval_o);
  eval_cmd->add_option("--attack", eval_attack, "AttackVector JSON")->required();

  std::string trade_est;
  auto* trade_cmd = app.add_subcommand("tradeoff", "Sparsity/detection trade-off curve (CSV)");
  add_common(trade_cmd, trade_o);
  trade_cmd->add_option("--estimate", trade_est, "SpikedEstimate JSON")->required();

  auto* mp_cmd = app.add_subcommand("mp-check", "Marcenko-Pastur edge containment on pure noise");
  add_common(mp_cmd, mp_o);

  auto* report_cmd = app.add_subcommand("report", "Run the configured experiment and emit its report");
  add_common(report_cmd, report_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*parse_cmd) {
    std::vector<std::string> warnings;
    const GridCase g = load_case(case_path, case_format, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    std::cerr << g.bus_count() << " buses, " << g.branches.size() << " branches ("
              << g.in_service_branch_count() << " in service), M = "
              << 2 * g.in_service_branch_count() + g.bus_count() << ", n = " << g.bus_count() - 1 << "\n";
    write_out(case_out, serialize_native_case(g));
    return 0;
  }

  if (*sim_cmd) {
    const ExperimentConfig cfg = resolve(sim_o);
    const Model m = model_for(cfg);
    TraceConfig tc;
    tc.sigma_theta = cfg.sigma_theta;
    tc.sigma_n = cfg.sigma_n;
    tc.horizon_T = horizon(m, cfg.p_ratios.front());
    tc.seed = cfg.master_seed;
    const MeasurementTrace trace = generate_trace(m.h, m.theta_bar, tc);
    if (sim_o.format == "json") {
      write_out(sim_o.out, trace_to_json(trace));
    } else {
      if (sim_o.out == "-") throw ParseError("simulate --format csv needs --out");
      write_trace_csv(trace, sim_o.out);
      write_trace_sidecar(trace, sim_o.out + ".meta.json");
    }
    return 0;
  }

  if (*learn_cmd) {
    const ExperimentConfig cfg = resolve(learn_o);
    MeasurementTrace trace;
    if (learn_trace.size() >= 5 && learn_trace.compare(learn_trace.size() - 5, 5, ".json") == 0) {
      trace = trace_from_json(slurp(learn_trace));
    } else {
      const std::string sidecar = learn_trace + ".meta.json";
      trace = read_trace(learn_trace, std::filesystem::exists(sidecar) ? sidecar : "");
    }
    LearnOptions lo;
    lo.spike_margin = cfg.spike_margin;
    lo.keep_modes = keep_modes;
    lo.estimate_sigma_n = cfg.estimate_sigma_n;
    const SpikedEstimate est = learn_subspace(trace, cfg.sigma_n, lo);
    std::cerr << "p = " << est.p_ratio << ", s = " << est.s << "\n";
    write_out(learn_o.out, spiked_estimate_to_json(est));
    return 0;
  }

  if (*attack_cmd) {
    const ExperimentConfig cfg = resolve(attack_o);
    const Model m = model_for(cfg);
    const SpikedEstimate est = spiked_estimate_from_json(slurp(attack_est));
    if (est.sensors() != m.h.rows()) throw ParseError("estimate dimension does not match the case");
    const AttackerStateVarEstimate sv{cfg.sigma_theta};
    AttackVector a;
    if (attack_kind == "optimal") a = optimal_attack(est, cfg.tau, sv, m.bdd);
    else if (attack_kind == "eigenmode")
      a = eigenmode_attack_extended(est, attack_mode, static_cast<int>(est.kept_modes()), cfg.tau, sv, m.bdd);
    else if (attack_kind == "full")
      a = full_subspace_attack(est, static_cast<int>(est.kept_modes()), cfg.tau, sv, m.bdd);
    else a = sparsest_attack(est, attack_m, cfg.tau, sv, cfg.eps_zero, m.bdd).attack;
    write_out(attack_o.out, attack_to_json(a));
    return 0;
  }

  if (*eval_cmd) {
    const ExperimentConfig cfg = resolve(eval_o);
    const Model m = model_for(cfg);
    const AttackVector a = attack_from_json(slurp(eval_attack));
    const StateEstimator estimator(m.h.h);
    const double rate = empirical_detection_rate(estimator, m.theta_bar, cfg.sigma_theta, a, m.bdd,
                                                 cfg.trials, cfg.master_seed);
    DetectionReport report;
    report.provenance = {config_hash(cfg), cfg.master_seed, kArtifactVersion};
    ReportRow row;
    row.experiment = "evaluate";
    row.label = a.construction.to_string();
    row.parameters = {{"tau", a.target_tau}};
    row.trials = cfg.trials;
    row.empirical_detection_prob = rate;
    row.predicted_detection_prob = a.predicted_detection_prob;
    row.metrics = {{"predicted_nu", a.predicted_nu}};
    report.rows.push_back(row);
    emit_report(rounded(report), eval_o.out, report_format(eval_o.format), eval_o.timing);
    return 0;
  }

  if (*trade_cmd) {
    const ExperimentConfig cfg = resolve(trade_o);
    const Model m = model_for(cfg);
    const SpikedEstimate est = spiked_estimate_from_json(slurp(trade_est));
    const StateEstimator estimator(m.h.h);
    const DetectionOracle oracle = [&](const AttackVector& a) {
      return empirical_detection_rate(estimator, m.theta_bar, cfg.sigma_theta, a, m.bdd, cfg.trials,
                                      cfg.master_seed);
    };
    const TradeoffCurve curve = tradeoff_curve(est, cfg.tau, {cfg.sigma_theta}, cfg.eps_zero, m.bdd, oracle);
    write_out(trade_o.out, tradeoff_to_csv(curve));
    return 0;
  }

  Overrides& o = *mp_cmd ? mp_o : report_o;
  ExperimentConfig cfg = resolve(o);
  if (*mp_cmd) cfg.experiment = ExperimentKind::mp_check;
  RunOptions ro;
  ro.threads = o.threads;
  const DetectionReport report = rounded(run_experiment(cfg, ro));
  emit_report(report, o.out, report_format(o.format), o.timing);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const fdi::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
