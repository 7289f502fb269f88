#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "fdi/case_io.hpp"
#include "fdi/error.hpp"
#include "fdi/numerics.hpp"

using namespace fdi;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string data(const std::string& name) { return std::string(FDI_DATA_DIR) + "/" + name; }

const char* kTwoBus = R"(function mpc = two_bus
mpc.baseMVA = 100;
mpc.bus = [
  0 3 0 0;
  1 1 0 0;
];
mpc.gen = [
  0 0;
];
mpc.branch = [
  0 1 0 0.5 0 0 0 0 0 0 1;
];
)";

GridCase two_bus() {
  GridCase g;
  g.base_mva = 100.0;
  g.reference_bus = 0;
  g.buses = {{0, 0.0, 0.0}, {1, 0.0, 0.0}};
  g.branches = {{0, 1, 0.5, BranchStatus::on}};
  return g;
}

std::string expect_parse_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.what();
  }
  FAIL("expected ParseError");
  return {};
}

int numeric_rank(const Eigen::MatrixXd& h) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(h);
  qr.setThreshold(1e-8);
  return static_cast<int>(qr.rank());
}

}  // namespace

TEST_SUITE("parse_matpower_case") {
  TEST_CASE("IEEE-14") {
    std::vector<std::string> warnings;
    const GridCase g = parse_matpower_case(slurp(data("case14.m")), &warnings);
    CHECK(g.bus_count() == 14);
    CHECK(g.branches.size() == 20);
    CHECK(g.reference_bus == 1);
    CHECK(g.base_mva == 100.0);
    CHECK(g.buses[2].load_mw == doctest::Approx(94.2));
    CHECK(g.buses[0].gen_mw == doctest::Approx(232.4));
    CHECK(build_measurement_matrix(g).rows() == 54);
    CHECK_FALSE(warnings.empty());  // version, gencost, ...
  }

  TEST_CASE("larger cases") {
    const GridCase g39 = load_case(data("case39.m"));
    CHECK(g39.bus_count() == 39);
    CHECK(g39.branches.size() == 46);
    const GridCase g118 = load_case(data("case118.m"));
    CHECK(g118.bus_count() == 118);
    CHECK(g118.branches.size() == 186);
    CHECK(build_measurement_matrix(g118).rows() == 490);
  }

  TEST_CASE("2-bus case") {
    const GridCase g = parse_matpower_case(kTwoBus);
    CHECK(g == two_bus());
  }

  TEST_CASE("missing branch block is named") {
    std::string text = kTwoBus;
    text = text.substr(0, text.find("mpc.branch"));
    const std::string msg = expect_parse_error([&] { parse_matpower_case(text); });
    CHECK(msg.find("mpc.branch") != std::string::npos);
  }

  TEST_CASE("no reference bus") {
    std::string text = kTwoBus;
    text.replace(text.find("0 3 0 0"), 7, "0 2 0 0");
    const std::string msg = expect_parse_error([&] { parse_matpower_case(text); });
    CHECK(msg.find("type-3") != std::string::npos);
  }

  TEST_CASE("duplicate bus id") {
    std::string text = kTwoBus;
    text.replace(text.find("1 1 0 0"), 7, "0 1 0 0");
    CHECK(expect_parse_error([&] { parse_matpower_case(text); }).find("duplicate bus id") !=
          std::string::npos);
  }

  TEST_CASE("nonpositive reactance on an in-service branch") {
    std::string text = kTwoBus;
    text.replace(text.find("0.5"), 3, "0.0");
    CHECK(expect_parse_error([&] { parse_matpower_case(text); }).find("nonpositive reactance") !=
          std::string::npos);
  }

  TEST_CASE("syntax error carries line and column") {
    std::string text = kTwoBus;
    text.replace(text.find("1 1 0 0"), 7, "1 1 0 @");
    try {
      parse_matpower_case(text);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 5);
      CHECK(e.column() == 9);
    }
  }

  TEST_CASE("out-of-service branches are retained but unused") {
    std::string text = kTwoBus;
    const auto pos = text.find("];\n", text.find("mpc.branch"));
    text.insert(pos, "  1 0 0 0.2 0 0 0 0 0 0 0;\n");
    const GridCase g = parse_matpower_case(text);
    REQUIRE(g.branches.size() == 2);
    CHECK(g.branches[1].status == BranchStatus::off);
    CHECK(g.in_service_branch_count() == 1);
    CHECK(build_measurement_matrix(g).rows() == 4);
  }

  TEST_CASE("comments, continuations and unknown fields") {
    const char* text = R"(% header comment
mpc.version = '2';
mpc.baseMVA = 100;   % trailing comment
mpc.bus = [0 3 0 0; 1 1 10 ...
  0];
mpc.gen = [0 10];
mpc.branch = [0 1 0 0.5];
mpc.bus_name = {'a'; 'b'};
)";
    std::vector<std::string> warnings;
    const GridCase g = parse_matpower_case(text, &warnings);
    CHECK(g.bus_count() == 2);
    CHECK(g.buses[1].load_mw == 10.0);
    CHECK(g.buses[0].gen_mw == 10.0);
    CHECK(warnings.size() == 2);
  }

  TEST_CASE("disconnected") {
    std::string text = kTwoBus;
    text.replace(text.find("  1 1 0 0;"), 10, "  1 1 0 0;\n  2 1 0 0;");
    CHECK(expect_parse_error([&] { parse_matpower_case(text); }) == "graph not connected");
  }
}

TEST_SUITE("parse_native_case") {
  TEST_CASE("IEEE-14 round trip") {
    const GridCase g = load_case(data("case14.m"));
    const GridCase back = parse_native_case(serialize_native_case(g));
    CHECK(back == g);
  }

  TEST_CASE("round trip with an off branch") {
    GridCase g = two_bus();
    g.branches.push_back({1, 0, 0.0, BranchStatus::off});
    CHECK(parse_native_case(serialize_native_case(g)) == g);
  }

  TEST_CASE("zero reactance") {
    const char* text = R"({"base_mva": 100, "reference_bus": 0,
      "buses": [{"id": 0, "load_mw": 0, "gen_mw": 0}, {"id": 1, "load_mw": 0, "gen_mw": 0}],
      "branches": [{"from": 0, "to": 1, "x": 0, "status": 1}]})";
    CHECK(expect_parse_error([&] { parse_native_case(text); }).find("nonpositive reactance") !=
          std::string::npos);
  }

  TEST_CASE("disconnected 3-bus case") {
    const char* text = R"({"base_mva": 100, "reference_bus": 0,
      "buses": [{"id": 0, "load_mw": 0, "gen_mw": 0}, {"id": 1, "load_mw": 0, "gen_mw": 0},
                {"id": 2, "load_mw": 0, "gen_mw": 0}],
      "branches": [{"from": 0, "to": 1, "x": 0.1, "status": 1},
                   {"from": 1, "to": 2, "x": 0.1, "status": 0}]})";
    CHECK(expect_parse_error([&] { parse_native_case(text); }) == "graph not connected");
  }

  TEST_CASE("schema errors carry a JSON pointer") {
    const char* text = R"({"base_mva": 100, "reference_bus": 0,
      "buses": [{"id": 0, "load_mw": 0, "gen_mw": 0}, {"id": 1.5, "load_mw": 0, "gen_mw": 0}],
      "branches": []})";
    CHECK(expect_parse_error([&] { parse_native_case(text); }).rfind("/buses/1/id", 0) == 0);
    CHECK(expect_parse_error([&] { parse_native_case(R"({"base_mva": 100})"); })
              .find("reference_bus") != std::string::npos);
    CHECK(expect_parse_error([&] { parse_native_case("{not json"); }).find("invalid JSON") !=
          std::string::npos);
  }

  TEST_CASE("auto format and missing files") {
    CHECK_THROWS_AS(load_case("/nonexistent/case.m"), IoError);
    CHECK_THROWS_AS(load_case(data("case14.m"), "xml"), ParseError);
  }
}

TEST_SUITE("build_measurement_matrix") {
  TEST_CASE("2-bus hand computation") {
    const MeasurementMatrix m = build_measurement_matrix(two_bus());
    REQUIRE(m.rows() == 4);
    REQUIRE(m.cols() == 1);
    CHECK(m.h(0, 0) == -2.0);
    CHECK(m.h(1, 0) == 2.0);
    CHECK(m.h(2, 0) == -2.0);
    CHECK(m.h(3, 0) == 2.0);
    CHECK(m.row_labels[0].to_string() == "flow_fwd:0");
    CHECK(m.row_labels[1].to_string() == "flow_rev:0");
    CHECK(m.row_labels[2].to_string() == "injection:0");
    CHECK(m.row_labels[3].to_string() == "injection:1");
    CHECK(m.state_buses == std::vector<int>{1});
  }

  TEST_CASE("IEEE-14 shape and rank") {
    const MeasurementMatrix m = build_measurement_matrix(load_case(data("case14.m")));
    CHECK(m.rows() == 54);
    CHECK(m.cols() == 13);
    CHECK(numeric_rank(m.h) == 13);
  }

  TEST_CASE("row labels round trip") {
    const MeasurementMatrix m = build_measurement_matrix(load_case(data("case14.m")));
    for (const auto& l : m.row_labels) CHECK(RowLabel::parse(l.to_string()) == l);
    CHECK_THROWS_AS(RowLabel::parse("flow:1"), ParseError);
    CHECK_THROWS_AS(RowLabel::parse("injection:x"), ParseError);
  }

  TEST_CASE("structural properties on every bundled case") {
    for (const char* name : {"case14.m", "case39.m", "case118.m"}) {
      CAPTURE(name);
      const GridCase g = load_case(data(name));
      const MeasurementMatrix m = build_measurement_matrix(g);
      const Eigen::Index l = static_cast<Eigen::Index>(g.in_service_branch_count());
      const Eigen::Index nb = static_cast<Eigen::Index>(g.bus_count());
      CHECK(m.rows() == 2 * l + nb);
      CHECK(m.cols() == nb - 1);
      CHECK(m.h.middleRows(l, l) == -m.h.topRows(l));
      CHECK(numeric_rank(m.h) == m.cols());

      GaussianStream rng(17);
      for (int rep = 0; rep < 5; ++rep) {
        Eigen::VectorXd theta(m.cols());
        rng.fill(theta);
        const Eigen::VectorXd y = m.h * theta;
        const Eigen::VectorXd flows = y.head(l);
        const Eigen::VectorXd inj = y.tail(nb);
        CHECK(std::abs(inj.sum()) <= 1e-10 * inj.cwiseAbs().sum());
        // Per-bus balance against the signed incident flows.
        Eigen::VectorXd balance = Eigen::VectorXd::Zero(nb);
        Eigen::Index row = 0;
        for (const auto& br : g.branches) {
          if (!br.in_service()) continue;
          balance(static_cast<Eigen::Index>(g.bus_index(br.from))) += flows(row);
          balance(static_cast<Eigen::Index>(g.bus_index(br.to))) -= flows(row);
          ++row;
        }
        CHECK((balance - inj).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + inj.cwiseAbs().maxCoeff()));
      }
    }
  }
}

TEST_SUITE("dc_power_flow") {
  TEST_CASE("zero injection means flat angles") {
    CHECK(dc_power_flow(two_bus()).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("2-bus with 0.5 pu at bus 1") {
    GridCase g = two_bus();
    g.buses[1].gen_mw = 50.0;
    const StateVector theta = dc_power_flow(g);
    REQUIRE(theta.size() == 1);
    CHECK(theta(0) == doctest::Approx(0.25).epsilon(1e-14));
  }

  TEST_CASE("IEEE-14 against an independent solve") {
    const GridCase g = load_case(data("case14.m"));
    const StateVector theta = dc_power_flow(g);
    REQUIRE(theta.size() == 13);
    CHECK(theta.allFinite());
    CHECK(theta.cwiseAbs().maxCoeff() < 1.0);

    const Eigen::MatrixXd b = reduced_susceptance(g);
    Eigen::VectorXd p(13);
    const MeasurementMatrix m = build_measurement_matrix(g);
    for (int k = 0; k < 13; ++k) {
      const Bus& bus = g.buses[g.bus_index(m.state_buses[k])];
      p(k) = (bus.gen_mw - bus.load_mw) / g.base_mva;
    }
    const Eigen::VectorXd oracle = b.fullPivLu().solve(p);
    CHECK((theta - oracle).cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("reduced susceptance equals the injection block of h restricted to state buses") {
    const GridCase g = load_case(data("case14.m"));
    const MeasurementMatrix m = build_measurement_matrix(g);
    const Eigen::MatrixXd b = reduced_susceptance(g);
    const Eigen::Index l = static_cast<Eigen::Index>(g.in_service_branch_count());
    Eigen::MatrixXd inj(m.cols(), m.cols());
    for (Eigen::Index k = 0; k < m.cols(); ++k)
      inj.row(k) = m.h.row(2 * l + static_cast<Eigen::Index>(g.bus_index(m.state_buses[k])));
    // Injection convention: sum of (theta_i - theta_j)/x over leaving branches.
    CHECK((inj - b).cwiseAbs().maxCoeff() <= 1e-12);
  }
}
