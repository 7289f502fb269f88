#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fdi/attack.hpp"

namespace fdi {

struct SparsityResult {
  int m = 0;            // subspace dimension allowed
  int m_effective = 0;  // smallest nested subspace that already contains the chosen attack
  int k_star = 0;
  int anchor = -1;      // measurement index j the winning LP anchored at
  double l1_norm = 0.0; // l1 norm of the anchored (unscaled) direction
  AttackVector attack;
  double predicted_detection_prob = 0.0;
};

struct TradeoffPoint {
  int m = 0;
  int k_star = 0;
  int sparsity = 0;  // M - k_star
  double predicted_detection_prob = 0.0;
  std::optional<double> empirical_detection_prob;
};

struct TradeoffCurve {
  std::vector<TradeoffPoint> points;
};

/// Best candidate among the anchored l1 programs of one subspace:
///   min ||U_m c||_1  s.t. (U_m c)_j = 1,  one LP per measurement j.
/// Returns nullopt when every anchor is infeasible.
struct SparseDirection {
  Eigen::VectorXd c;  // normalized coefficients on the first m modes
  int k_star = 0;
  int anchor = -1;
  double l1_norm = 0.0;
  int m = 0;
};
std::optional<SparseDirection> sparsest_direction(const Eigen::MatrixXd& u_m, double eps_zero);

/// Number of entries with |a_j| > eps_zero * ||a||_inf.
int support_size(const Eigen::VectorXd& a, double eps_zero);

/// Sparsest attack within span(U_m) scaled onto the impact boundary. Because the feasible
/// sets nest in m, every subspace m' <= m is searched and the sparsest candidate kept
/// (ties: smaller l1 norm, then lower anchor, then smaller m').
SparsityResult sparsest_attack(const SpikedEstimate& est, int m, double tau,
                               const AttackerStateVarEstimate& sv, double eps_zero,
                               const BddConfig& bdd);

/// Empirical detection oracle: given an attack, returns the detection frequency over fresh
/// snapshots. Supplied by callers that know the true measurement matrix.
using DetectionOracle = std::function<double(const AttackVector&)>;

/// Sweeps m = 1..s, reusing each subspace's candidates for the nested search.
TradeoffCurve tradeoff_curve(const SpikedEstimate& est, double tau,
                             const AttackerStateVarEstimate& sv, double eps_zero,
                             const BddConfig& bdd, const DetectionOracle& oracle = {});

std::string tradeoff_to_csv(const TradeoffCurve& curve);

}  // namespace fdi
