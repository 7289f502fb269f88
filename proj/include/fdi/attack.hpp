#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fdi/spiked_rmt.hpp"
#include "fdi/state_estimation.hpp"

namespace fdi {

// Units. The spectral estimate lives in sigma_n-normalized coordinates (noise variance 1).
// Coefficients c are stored in those units and the injected vector is a = sigma_n * U c in
// per-unit. Impact targets tau and state-error estimates are ||delta theta||^2 / sigma_n^2;
// multiply by sigma_n^2 for squared radians.

enum class ConstructionKind { optimal_mode1, eigenmode, full_subspace, sparse };

struct Construction {
  ConstructionKind kind = ConstructionKind::optimal_mode1;
  int index = 0;  // mode index for eigenmode, subspace dimension m for sparse

  std::string to_string() const;
  static Construction parse(const std::string& text);
  bool operator==(const Construction&) const = default;
};

struct AttackVector {
  Eigen::VectorXd a;             // per-unit, length M
  Eigen::VectorXd coefficients;  // normalized, one per mode in `modes`
  std::vector<int> modes;        // 1-based sample eigenmode indices spanning the attack
  double target_tau = 0.0;
  double predicted_nu = 0.0;
  double predicted_detection_prob = 0.0;
  Construction construction;
};

struct AttackerStateVarEstimate {
  double sigma_theta_hat = 0.0;  // radians
};

/// Pooled standard deviation of historical angle fluctuations (rows: buses, columns: time).
AttackerStateVarEstimate estimate_state_variation(const Eigen::MatrixXd& angle_history);

/// nu_hat = sum_i (1 - omega_hat_i) c_i^2 over the first |c| modes (|c| must equal est.s).
double noncentrality_estimate(const SpikedEstimate& est, const Eigen::VectorXd& c);
/// (sigma_theta_hat / sigma_n)^2 * sum_i (omega_hat_i / mu_hat_i) c_i^2, normalized units.
double state_error_estimate(const SpikedEstimate& est, const Eigen::VectorXd& c,
                            const AttackerStateVarEstimate& sv);

/// Detection probability implied by nu_hat under the calibrated BDD.
double predicted_detection_probability(double nu_hat, const BddConfig& bdd);

AttackVector optimal_attack(const SpikedEstimate& est, double tau,
                            const AttackerStateVarEstimate& sv, const BddConfig& bdd);
/// Single-mode attack on mode i (1-based, i <= est.s).
AttackVector eigenmode_attack(const SpikedEstimate& est, int i, double tau,
                              const AttackerStateVarEstimate& sv, const BddConfig& bdd);
/// Single-mode attack on any kept mode i <= modes, using mode_table() for i > s. This is
/// what a PCA attacker that ignores the phase transition would build.
AttackVector eigenmode_attack_extended(const SpikedEstimate& est, int i, int modes, double tau,
                                       const AttackerStateVarEstimate& sv,
                                       const BddConfig& bdd);
/// Baseline over the first `modes` sample eigenvectors with
/// c_i = sqrt(tau / (modes * sigma'^2 * omega_hat_i / mu_hat_i)).
AttackVector full_subspace_attack(const SpikedEstimate& est, int modes, double tau,
                                  const AttackerStateVarEstimate& sv, const BddConfig& bdd);

/// Builds an attack from coefficients on the given 1-based modes and fills predictions
/// from `table`.
AttackVector assemble_attack(const SpikedEstimate& est, const ModeTable& table,
                             std::vector<int> modes, const Eigen::VectorXd& coefficients,
                             double tau, Construction construction, const BddConfig& bdd);

EstimationResult inject_and_detect(const MeasurementMatrix& h, const Eigen::VectorXd& z,
                                   const AttackVector& attack, const BddConfig& bdd);

/// Fraction of `trials` fresh snapshots (theta = theta_bar + eps, Gaussian noise) on which
/// the BDD alarms once `attack` is injected. Seeded per snapshot from `seed`.
double empirical_detection_rate(const StateEstimator& estimator, const StateVector& theta_bar,
                                double sigma_theta, const AttackVector& attack,
                                const BddConfig& bdd, int trials, std::uint64_t seed);

std::string attack_to_json(const AttackVector& attack);
AttackVector attack_from_json(const std::string& text);

}  // namespace fdi
