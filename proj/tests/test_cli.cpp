#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fdi/attack.hpp"
#include "fdi/case_io.hpp"
#include "fdi/harness.hpp"
#include "fdi/spiked_rmt.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "fdi_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

fs::path in_work(const std::string& name) { return work_dir() / name; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

/// Runs the CLI with `args`; stdout goes to out.txt and stderr to err.txt in the work directory.
int cli(const std::string& args) {
  const std::string cmd = std::string("\"") + FDI_CLI + "\" " + args + " >\"" + in_work("out.txt").string() +
                          "\" 2>\"" + in_work("err.txt").string() + "\"";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string out() { return slurp(in_work("out.txt")); }
std::string err() { return slurp(in_work("err.txt")); }

std::string config(const std::string& experiment, int trials, const std::string& extra = "") {
  return std::string("{\n") + "  \"case_path\": \"" + FDI_DATA_DIR + "/case14.m\",\n" +
         "  \"sigma_n\": 0.02,\n  \"sigma_theta\": 0.002,\n  \"p_ratios\": [0.5],\n  \"tau\": 0.3,\n" +
         "  \"fp_rate\": 0.02,\n  \"trials\": " + std::to_string(trials) + ",\n  \"master_seed\": 3,\n" +
         extra + "  \"experiment\": \"" + experiment + "\"\n}\n";
}

std::string config_file(const std::string& name, const std::string& text) {
  const fs::path p = in_work(name);
  write(p, text);
  return "\"" + p.string() + "\"";
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(cli("--help") == 0);
  CHECK(out().find("parse-case") != std::string::npos);
  CHECK(cli("report --help") == 0);
  CHECK(cli("") == 1);
  CHECK(cli("frobnicate") == 1);
  CHECK(cli("report") == 1);
  CHECK(cli("report --config x.json --format xml") == 1);
}

TEST_CASE("parse-case") {
  CHECK(cli(std::string("parse-case \"") + FDI_DATA_DIR + "/case14.m\"") == 0);
  const fdi::GridCase g = fdi::parse_native_case(out());
  CHECK(g.bus_count() == 14);
  CHECK(err().find("M = 54") != std::string::npos);

  write(in_work("bad.m"), "function mpc = bad\nmpc.bus = [1 3 0 0 0 0 1 1 0 1 1 1.1 0.9\n");
  CHECK(cli("parse-case \"" + in_work("bad.m").string() + "\"") == 1);
  CHECK(err().find("error:") == 0);
  CHECK(cli("parse-case \"" + in_work("missing.m").string() + "\"") == 3);
}

TEST_CASE("config errors map to exit codes") {
  CHECK(cli("report --config \"" + in_work("nope.json").string() + "\"") == 3);
  CHECK(cli("report --config " + config_file("junk.json", "{ not json")) == 1);
  CHECK(cli("report --config " + config_file("unknown.json", config("fp_calibration", 5, "  \"colour\": 1,\n"))) == 1);
  std::string bad_case = config("fp_calibration", 5);
  bad_case.replace(bad_case.find("case14.m"), 8, "case99.m");
  CHECK(cli("report --config " + config_file("badcase.json", bad_case)) == 3);
}

TEST_CASE("report emits the harness report and honours overrides") {
  const std::string cfg = config_file("fp.json", config("fp_calibration", 50));
  CHECK(cli("report --config " + cfg) == 0);
  const fdi::DetectionReport r = fdi::report_from_json(out());
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].trials == 50);
  CHECK(r.provenance.seed == 3);

  CHECK(cli("report --config " + cfg + " --trials 80 --seed 11 --format csv") == 0);
  const std::string csv = out();
  CHECK(csv.rfind("experiment,label,parameters,trials,", 0) == 0);
  CHECK(csv.find(",80,") != std::string::npos);

  const fs::path o1 = in_work("r1.json");
  const fs::path o2 = in_work("r2.json");
  CHECK(cli("report --config " + cfg + " --out \"" + o1.string() + "\"") == 0);
  CHECK(cli("report --config " + cfg + " --threads 3 --out \"" + o2.string() + "\"") == 0);
  CHECK(slurp(o1) == slurp(o2));
  CHECK(cli("report --config " + cfg + " --out /nonexistent/dir/r.json") == 3);
  CHECK(cli("report --config " + cfg + " --trials 0") == 1);
}

TEST_CASE("simulate, learn, attack, evaluate, tradeoff") {
  const std::string cfg = config_file("pipe.json", config("attack_comparison", 40));
  const fs::path trace = in_work("trace.csv");
  CHECK(cli("simulate --config " + cfg + " --format csv --out \"" + trace.string() + "\"") == 0);
  CHECK(fs::exists(trace.string() + ".meta.json"));
  CHECK(cli("simulate --config " + cfg + " --p 0.25") == 0);
  CHECK(out().find("\"horizon_T\":216") != std::string::npos);

  const fs::path est = in_work("est.json");
  CHECK(cli("learn --config " + cfg + " --trace \"" + trace.string() + "\" --keep-modes 13 --out \"" + est.string() +
            "\"") == 0);
  const fdi::SpikedEstimate e = fdi::spiked_estimate_from_json(slurp(est));
  CHECK(e.sensors() == 54);
  CHECK(e.s >= 1);
  CHECK(e.kept_modes() == 13);

  const fs::path atk = in_work("atk.json");
  CHECK(cli("attack --config " + cfg + " --estimate \"" + est.string() + "\" --out \"" + atk.string() + "\"") == 0);
  const fdi::AttackVector a = fdi::attack_from_json(slurp(atk));
  CHECK(a.a.size() == 54);
  CHECK(a.target_tau == doctest::Approx(0.3));
  for (const char* kind : {"eigenmode --mode 13", "full", "sparse --m 2"})
    CHECK(cli("attack --config " + cfg + " --estimate \"" + est.string() + "\" --kind " + kind) == 0);

  CHECK(cli("evaluate --config " + cfg + " --attack \"" + atk.string() + "\"") == 0);
  const fdi::DetectionReport r = fdi::report_from_json(out());
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].trials == 40);
  CHECK(*r.rows[0].empirical_detection_prob >= 0.0);

  CHECK(cli("tradeoff --config " + cfg + " --trials 5 --estimate \"" + est.string() + "\"") == 0);
  CHECK(out().find('\n') != std::string::npos);

  CHECK(cli("attack --config " + cfg + " --estimate \"" + trace.string() + "\"") == 1);
}

TEST_CASE("numerical failure exits with 2") {
  const std::string cfg = config_file("margin.json", config("attack_comparison", 10, "  \"spike_margin\": 1000,\n"));
  const fs::path trace = in_work("t0.csv");
  REQUIRE(cli("simulate --config " + cfg + " --format csv --out \"" + trace.string() + "\"") == 0);
  const fs::path est = in_work("s0.json");
  REQUIRE(cli("learn --config " + cfg + " --trace \"" + trace.string() + "\" --out \"" + est.string() + "\"") == 0);
  CHECK(fdi::spiked_estimate_from_json(slurp(est)).s == 0);
  CHECK(cli("attack --config " + cfg + " --estimate \"" + est.string() + "\"") == 2);
  CHECK(err().find("s = 0") != std::string::npos);
}

TEST_CASE("mp-check") {
  const std::string cfg =
      config_file("mp.json", config("fp_calibration", 4, "  \"mp_dimension\": 60,\n"));
  CHECK(cli("mp-check --config " + cfg) == 0);
  const fdi::DetectionReport r = fdi::report_from_json(out());
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].experiment == "mp_check");
  CHECK(r.rows[0].metrics.at("trials_inside") == 4);
}
