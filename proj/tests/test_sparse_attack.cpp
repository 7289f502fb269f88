#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "fdi/attack.hpp"
#include "fdi/case_io.hpp"
#include "fdi/error.hpp"
#include "fdi/numerics.hpp"
#include "fdi/simulator.hpp"
#include "fdi/sparse_attack.hpp"
#include "fdi/spiked_rmt.hpp"

using namespace fdi;

namespace {

constexpr double kSigmaN = 0.02;
constexpr double kSigmaTheta = 0.002;
constexpr double kEps = 1e-6;
const AttackerStateVarEstimate kSv{kSigmaTheta};

struct Ieee14 {
  GridCase g = load_case(std::string(FDI_DATA_DIR) + "/case14.m");
  MeasurementMatrix m = build_measurement_matrix(g);
  StateVector theta = dc_power_flow(g);
  BddConfig bdd = calibrate_bdd(54, 13, 0.02, kSigmaN);
};

const Ieee14& ieee14() {
  static const Ieee14 c;
  return c;
}

SpikedEstimate learn(double p, std::uint64_t seed) {
  TraceConfig cfg;
  cfg.sigma_theta = kSigmaTheta;
  cfg.sigma_n = kSigmaN;
  cfg.horizon_T = static_cast<int>(std::lround(54 / p));
  cfg.seed = seed;
  return learn_subspace(generate_trace(ieee14().m, ieee14().theta, cfg), kSigmaN);
}

// Smallest support of a nonzero vector in span(u): a support S works when the rows outside
// S leave a nontrivial null space.
int brute_force_min_support(const Eigen::MatrixXd& u) {
  const int rows = static_cast<int>(u.rows());
  const int m = static_cast<int>(u.cols());
  int best = rows;
  for (unsigned mask = 1; mask < (1u << rows); ++mask) {
    const int k = __builtin_popcount(mask);
    if (k >= best) continue;
    Eigen::MatrixXd outside(rows - k, m);
    int r = 0;
    for (int j = 0; j < rows; ++j)
      if (!(mask & (1u << j))) outside.row(r++) = u.row(j);
    const int rank = r == 0 ? 0 : static_cast<int>(Eigen::FullPivLU<Eigen::MatrixXd>(outside).setThreshold(1e-10).rank());
    if (rank < m) best = k;
  }
  return best;
}

Eigen::MatrixXd orthonormal_columns(const Eigen::MatrixXd& basis) {
  return basis.householderQr().householderQ() * Eigen::MatrixXd::Identity(basis.rows(), basis.cols());
}

Eigen::VectorXd padded(const Eigen::VectorXd& c, int s) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(s);
  out.head(c.size()) = c;
  return out;
}

}  // namespace

TEST_CASE("support_size") {
  CHECK(support_size(Eigen::Vector4d(1.0, 1e-7, -0.5, 0.0), 1e-6) == 2);
  CHECK(support_size(Eigen::Vector4d(1.0, 2e-6, -0.5, 0.0), 1e-6) == 3);
  CHECK(support_size(Eigen::VectorXd::Zero(3), 1e-6) == 0);
  CHECK(support_size(Eigen::VectorXd(), 1e-6) == 0);
}

TEST_CASE("4x2 subspace with a planted 2-sparse vector") {
  Eigen::MatrixXd basis(4, 2);
  basis << 1, 0.3, -2, 0.7, 0, -0.4, 0, 1.1;
  const Eigen::MatrixXd u = orthonormal_columns(basis);
  REQUIRE(brute_force_min_support(u) == 2);
  const auto d = sparsest_direction(u, kEps);
  REQUIRE(d);
  CHECK(d->k_star == 2);
  const Eigen::VectorXd a = u * d->c;
  CHECK(std::abs(a(2)) <= kEps * a.cwiseAbs().maxCoeff());
  CHECK(std::abs(a(3)) <= kEps * a.cwiseAbs().maxCoeff());
  CHECK(a(d->anchor) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("random 6x3 subspaces with planted 2-sparse vectors") {
  GaussianStream g(42);
  int good = 0;
  for (int inst = 0; inst < 200; ++inst) {
    Eigen::MatrixXd basis(6, 3);
    for (int j = 0; j < 3; ++j) g.fill(basis.col(j));
    const int i0 = inst % 6;
    const int i1 = (i0 + 1 + inst / 6 % 5) % 6;
    basis.col(0).setZero();
    basis(i0, 0) = 1.0 + g.uniform();
    basis(i1, 0) = -1.0 - g.uniform();
    const Eigen::MatrixXd u = orthonormal_columns(basis);
    const auto d = sparsest_direction(u, kEps);
    REQUIRE(d);
    const int bf = brute_force_min_support(u);
    CHECK(bf <= 2);
    good += d->k_star <= bf + 1;
  }
  MESSAGE("within one of brute force: " << good << " / 200");
  CHECK(good >= 180);
}

TEST_CASE("zero rows are skipped as anchors") {
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(3, 1);
  u(1, 0) = 1.0;
  const auto d = sparsest_direction(u, kEps);
  REQUIRE(d);
  CHECK(d->anchor == 1);
  CHECK(d->k_star == 1);
  CHECK_FALSE(sparsest_direction(Eigen::MatrixXd::Zero(3, 1), kEps));
  CHECK_THROWS_AS(sparsest_direction(u, 0.0), std::invalid_argument);
}

TEST_CASE("m = 1 keeps the support of u_hat_1") {
  const SpikedEstimate est = learn(0.5, 1);
  const SparsityResult r = sparsest_attack(est, 1, 0.3, kSv, kEps, ieee14().bdd);
  CHECK(r.k_star == support_size(est.u_hat.col(0), kEps));
  CHECK(r.m_effective == 1);
  // Direction is u_hat_1 up to scale, and the scale lands on the impact target.
  const AttackVector opt = optimal_attack(est, 0.3, kSv, ieee14().bdd);
  CHECK(std::abs(std::abs(r.attack.coefficients(0)) - opt.coefficients(0)) <= 1e-9 * opt.coefficients(0));
  CHECK(r.predicted_detection_prob == doctest::Approx(opt.predicted_detection_prob).epsilon(1e-9));
}

TEST_CASE("feasibility and nesting on IEEE-14") {
  for (std::uint64_t seed : {2u, 3u}) {
    const SpikedEstimate est = learn(0.5, seed);
    REQUIRE(est.s >= 2);
    int prev_k = 1 << 30;
    for (int m = 1; m <= est.s; ++m) {
      CAPTURE(m);
      const SparsityResult r = sparsest_attack(est, m, 0.3, kSv, kEps, ieee14().bdd);
      CHECK(r.m == m);
      CHECK(r.m_effective <= m);
      CHECK(r.k_star <= prev_k);
      prev_k = r.k_star;
      const Eigen::MatrixXd u = est.u_hat.leftCols(m);
      const Eigen::VectorXd a = r.attack.a / kSigmaN;
      CHECK((a - u * (u.transpose() * a)).norm() <= 1e-8 * a.norm());
      const double impact = state_error_estimate(est, padded(r.attack.coefficients, est.s), kSv);
      CHECK(std::abs(impact - 0.3) <= 1e-8);
      CHECK(r.k_star == support_size(r.attack.a, kEps));
      CHECK(r.attack.construction.to_string() == "sparse:" + std::to_string(m));
    }
  }
}

TEST_CASE("nested result matches an exhaustive check over every anchored program") {
  const SpikedEstimate est = learn(0.5, 4);
  const int m = std::min(est.s, 4);
  int best = 1 << 30;
  for (int k = 1; k <= m; ++k) {
    const Eigen::MatrixXd u = est.u_hat.leftCols(k);
    for (Eigen::Index j = 0; j < u.rows(); ++j) {
      // Single-anchor LP built independently of the implementation.
      const Eigen::Index rows = u.rows();
      const Eigen::Index nv = 2 * k + 2 * rows;
      LpProblem lp;
      lp.objective = Eigen::VectorXd::Zero(nv);
      lp.objective.tail(2 * rows).setOnes();
      lp.a_eq = Eigen::MatrixXd::Zero(rows + 1, nv);
      lp.a_eq.block(0, 0, rows, k) = u;
      lp.a_eq.block(0, k, rows, k) = -u;
      lp.a_eq.block(0, 2 * k, rows, rows) = -Eigen::MatrixXd::Identity(rows, rows);
      lp.a_eq.block(0, 2 * k + rows, rows, rows) = Eigen::MatrixXd::Identity(rows, rows);
      lp.a_eq.block(rows, 0, 1, k) = u.row(j);
      lp.a_eq.block(rows, k, 1, k) = -u.row(j);
      lp.b_eq = Eigen::VectorXd::Zero(rows + 1);
      lp.b_eq(rows) = 1.0;
      const auto res = solve_lp(lp);
      if (const auto* sol = std::get_if<LpSolution>(&res)) {
        const Eigen::VectorXd c = sol->x.head(k) - sol->x.segment(k, k);
        best = std::min(best, support_size(u * c, kEps));
      }
    }
  }
  CHECK(sparsest_attack(est, m, 0.3, kSv, kEps, ieee14().bdd).k_star == best);
}

TEST_CASE("trade-off curve") {
  const SpikedEstimate est = learn(0.5, 5);
  const StateEstimator se(ieee14().m.h);
  const TradeoffCurve curve = tradeoff_curve(est, 0.3, kSv, kEps, ieee14().bdd, [&](const AttackVector& a) {
    return empirical_detection_rate(se, ieee14().theta, kSigmaTheta, a, ieee14().bdd, 200, 9);
  });
  REQUIRE(static_cast<int>(curve.points.size()) == est.s);
  for (int i = 0; i < est.s; ++i) {
    const auto& p = curve.points[static_cast<std::size_t>(i)];
    CHECK(p.m == i + 1);
    CHECK(p.sparsity == 54 - p.k_star);
    REQUIRE(p.empirical_detection_prob);
    CHECK(*p.empirical_detection_prob >= 0.0);
    CHECK(*p.empirical_detection_prob <= 1.0);
    if (i > 0) CHECK(p.k_star <= curve.points[static_cast<std::size_t>(i - 1)].k_star);
    CHECK(p.k_star == sparsest_attack(est, i + 1, 0.3, kSv, kEps, ieee14().bdd).k_star);
  }
  CHECK(curve.points.front().predicted_detection_prob <= curve.points.back().predicted_detection_prob);

  const std::string csv = tradeoff_to_csv(curve);
  CHECK(csv.rfind("m,k_star,sparsity,predicted_p,empirical_p\n1,", 0) == 0);
  const TradeoffCurve bare = tradeoff_curve(est, 0.3, kSv, kEps, ieee14().bdd);
  CHECK_FALSE(bare.points.front().empirical_detection_prob);
  CHECK(tradeoff_to_csv(bare).find(",\n") != std::string::npos);
}

TEST_CASE("deterministic") {
  const SpikedEstimate est = learn(0.5, 6);
  const auto a = sparsest_attack(est, est.s, 0.3, kSv, kEps, ieee14().bdd);
  const auto b = sparsest_attack(est, est.s, 0.3, kSv, kEps, ieee14().bdd);
  CHECK(a.attack.a == b.attack.a);
  CHECK(a.anchor == b.anchor);
}

TEST_CASE("argument errors") {
  const SpikedEstimate est = learn(0.5, 7);
  const BddConfig& bdd = ieee14().bdd;
  CHECK_THROWS_AS(sparsest_attack(est, 0, 0.3, kSv, kEps, bdd), std::invalid_argument);
  CHECK_THROWS_AS(sparsest_attack(est, est.s + 1, 0.3, kSv, kEps, bdd), std::invalid_argument);
  CHECK_THROWS_AS(sparsest_attack(est, 1, 0.0, kSv, kEps, bdd), std::invalid_argument);
  CHECK_THROWS_AS(sparsest_attack(est, 1, 0.3, kSv, 0.0, bdd), std::invalid_argument);
  SpikedEstimate none = est;
  none.s = 0;
  CHECK_THROWS_AS(sparsest_attack(none, 1, 0.3, kSv, kEps, bdd), NumericalError);
  CHECK_THROWS_AS(tradeoff_curve(none, 0.3, kSv, kEps, bdd), NumericalError);
}
