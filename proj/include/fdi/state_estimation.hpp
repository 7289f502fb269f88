#pragma once

#include <Eigen/Dense>

#include "fdi/case_io.hpp"
#include "fdi/numerics.hpp"

namespace fdi {

/// Chi-square residual test. `threshold_zeta` is in physical residual units (pu^2): the
/// residual is compared to zeta directly, which equals comparing residual / sigma_n^2 to the
/// standard chi-square quantile.
struct BddConfig {
  double false_positive_rate = 0.02;
  double threshold_zeta = 0.0;
  int df = 1;
  double sigma_n = 1.0;

  /// zeta / sigma_n^2, the threshold on the normalized residual.
  double normalized_threshold() const { return threshold_zeta / (sigma_n * sigma_n); }
};

struct EstimationResult {
  StateVector theta_hat;
  double residual_sq = 0.0;
  bool alarm = false;
};

/// Weighted-least-squares estimator with W = I. Caches the Cholesky factor of h'h so that
/// repeated estimates over the same measurement matrix cost two triangular solves.
class StateEstimator {
public:
  explicit StateEstimator(const Eigen::MatrixXd& h);  // NumericalError if rank deficient

  StateVector estimate(const Eigen::VectorXd& z) const;
  double residual_sq(const Eigen::VectorXd& z) const;
  EstimationResult detect(const Eigen::VectorXd& z, const BddConfig& bdd) const;
  const Eigen::MatrixXd& h() const { return h_; }

private:
  Eigen::MatrixXd h_;
  Cholesky normal_;
};

StateVector estimate_state(const MeasurementMatrix& h, const Eigen::VectorXd& z);
double residual_sq(const MeasurementMatrix& h, const Eigen::VectorXd& z);
BddConfig calibrate_bdd(int m, int n, double fp_rate, double sigma_n);
EstimationResult inject_and_detect(const MeasurementMatrix& h, const Eigen::VectorXd& z,
                                   const Eigen::VectorXd& a, const BddConfig& bdd);

}  // namespace fdi
