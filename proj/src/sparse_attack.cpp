#include "fdi/sparse_attack.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "fdi/error.hpp"
#include "fdi/numerics.hpp"

namespace fdi {

int support_size(const Eigen::VectorXd& a, double eps_zero) {
  if (a.size() == 0) return 0;
  const double cut = eps_zero * a.cwiseAbs().maxCoeff();
  int k = 0;
  for (Eigen::Index j = 0; j < a.size(); ++j)
    if (std::abs(a(j)) > cut) ++k;
  return k;
}

namespace {

// (k, l1) lexicographic with a relative tolerance on l1 so that equal-norm candidates fall
// through to the earlier (lower anchor / smaller subspace) one.
bool better(int k, double l1, int best_k, double best_l1) {
  if (k != best_k) return k < best_k;
  return l1 < best_l1 - 1e-9 * std::max(1.0, best_l1);
}

}  // namespace

std::optional<SparseDirection> sparsest_direction(const Eigen::MatrixXd& u, double eps_zero) {
  if (!(eps_zero > 0.0)) throw std::invalid_argument("sparsest_direction: eps_zero must be positive");
  const Eigen::Index rows = u.rows();
  const Eigen::Index m = u.cols();
  if (m < 1) throw std::invalid_argument("sparsest_direction: empty subspace");

  // Variables [c+ (m), c- (m), t+ (M), t- (M)]: U(c+ - c-) - t+ + t- = 0 and
  // U_j (c+ - c-) = 1; minimize sum(t+ + t-).
  const Eigen::Index nv = 2 * m + 2 * rows;
  LpProblem lp;
  lp.objective = Eigen::VectorXd::Zero(nv);
  lp.objective.tail(2 * rows).setOnes();
  lp.a_eq = Eigen::MatrixXd::Zero(rows + 1, nv);
  lp.a_eq.block(0, 0, rows, m) = u;
  lp.a_eq.block(0, m, rows, m) = -u;
  lp.a_eq.block(0, 2 * m, rows, rows) = -Eigen::MatrixXd::Identity(rows, rows);
  lp.a_eq.block(0, 2 * m + rows, rows, rows) = Eigen::MatrixXd::Identity(rows, rows);
  lp.b_eq = Eigen::VectorXd::Zero(rows + 1);
  lp.b_eq(rows) = 1.0;

  std::optional<SparseDirection> best;
  for (Eigen::Index j = 0; j < rows; ++j) {
    if (u.row(j).cwiseAbs().maxCoeff() <= 1e-14) continue;
    lp.a_eq.block(rows, 0, 1, m) = u.row(j);
    lp.a_eq.block(rows, m, 1, m) = -u.row(j);
    const LpResult res = solve_lp(lp);
    const auto* sol = std::get_if<LpSolution>(&res);
    if (!sol) continue;
    const Eigen::VectorXd c = sol->x.head(m) - sol->x.segment(m, m);
    const Eigen::VectorXd a = u * c;
    const int k = support_size(a, eps_zero);
    const double l1 = a.lpNorm<1>();
    if (!best || better(k, l1, best->k_star, best->l1_norm))
      best = SparseDirection{c, k, static_cast<int>(j), l1, static_cast<int>(m)};
  }
  return best;
}

namespace {

double impact_of(const SpikedEstimate& est, const Eigen::VectorXd& c, double ratio_sq) {
  const Eigen::Index m = c.size();
  return ratio_sq * (est.omega_hat.head(m).array() / est.mu_hat.head(m).array() * c.array().square()).sum();
}

SparsityResult finish(const SpikedEstimate& est, int m, const SparseDirection& dir, double tau,
                      const AttackerStateVarEstimate& sv, double eps_zero, const BddConfig& bdd) {
  if (!(sv.sigma_theta_hat > 0.0)) throw std::invalid_argument("sigma_theta_hat must be positive");
  const double ratio = sv.sigma_theta_hat / est.sigma_n;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(m);
  c.head(dir.m) = dir.c;
  const double impact = impact_of(est, c, ratio * ratio);
  if (!(impact > 0.0)) throw NumericalError("sparsest_attack: direction carries no impact");
  c *= std::sqrt(tau / impact);

  std::vector<int> modes(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) modes[static_cast<std::size_t>(i)] = i + 1;
  SparsityResult out;
  out.m = m;
  out.m_effective = dir.m;
  out.anchor = dir.anchor;
  out.l1_norm = dir.l1_norm;
  out.attack = assemble_attack(est, mode_table(est, m), std::move(modes), c, tau,
                               {ConstructionKind::sparse, m}, bdd);
  out.k_star = support_size(out.attack.a, eps_zero);
  out.predicted_detection_prob = out.attack.predicted_detection_prob;
  return out;
}

void check_args(const SpikedEstimate& est, int m, double tau, double eps_zero) {
  if (est.s < 1) throw NumericalError("no recoverable subspace (s = 0)");
  if (m < 1 || m > est.s) throw std::invalid_argument("sparsest_attack: m must lie in [1, s]");
  if (!(tau > 0.0)) throw std::invalid_argument("sparsest_attack: tau must be positive");
  if (!(eps_zero > 0.0)) throw std::invalid_argument("sparsest_attack: eps_zero must be positive");
}

}  // namespace

SparsityResult sparsest_attack(const SpikedEstimate& est, int m, double tau,
                               const AttackerStateVarEstimate& sv, double eps_zero,
                               const BddConfig& bdd) {
  check_args(est, m, tau, eps_zero);
  std::optional<SparseDirection> best;
  for (int k = 1; k <= m; ++k) {
    auto d = sparsest_direction(est.u_hat.leftCols(k), eps_zero);
    if (d && (!best || better(d->k_star, d->l1_norm, best->k_star, best->l1_norm))) best = d;
  }
  if (!best) throw NumericalError("sparsest_attack: every anchored program is infeasible");
  return finish(est, m, *best, tau, sv, eps_zero, bdd);
}

TradeoffCurve tradeoff_curve(const SpikedEstimate& est, double tau,
                             const AttackerStateVarEstimate& sv, double eps_zero,
                             const BddConfig& bdd, const DetectionOracle& oracle) {
  check_args(est, 1, tau, eps_zero);
  TradeoffCurve curve;
  std::optional<SparseDirection> best;
  for (int m = 1; m <= est.s; ++m) {
    auto d = sparsest_direction(est.u_hat.leftCols(m), eps_zero);
    if (d && (!best || better(d->k_star, d->l1_norm, best->k_star, best->l1_norm))) best = d;
    if (!best) throw NumericalError("tradeoff_curve: every anchored program is infeasible");
    const SparsityResult r = finish(est, m, *best, tau, sv, eps_zero, bdd);
    TradeoffPoint pt;
    pt.m = m;
    pt.k_star = r.k_star;
    pt.sparsity = static_cast<int>(est.sensors()) - r.k_star;
    pt.predicted_detection_prob = r.predicted_detection_prob;
    if (oracle) pt.empirical_detection_prob = oracle(r.attack);
    curve.points.push_back(pt);
  }
  return curve;
}

std::string tradeoff_to_csv(const TradeoffCurve& curve) {
  std::string s = "m,k_star,sparsity,predicted_p,empirical_p\n";
  char buf[128];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%.10g,", p.m, p.k_star, p.sparsity,
                  p.predicted_detection_prob);
    s += buf;
    if (p.empirical_detection_prob) {
      std::snprintf(buf, sizeof buf, "%.10g", *p.empirical_detection_prob);
      s += buf;
    }
    s += "\n";
  }
  return s;
}

}  // namespace fdi
