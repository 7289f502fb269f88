#include "fdi/state_estimation.hpp"

#include <stdexcept>

#include "fdi/error.hpp"

namespace fdi {

StateEstimator::StateEstimator(const Eigen::MatrixXd& h) : h_(h) {
  if (h.cols() > h.rows()) throw NumericalError("StateEstimator: h has more columns than rows");
  try {
    normal_ = Cholesky(h.transpose() * h);
  } catch (const NumericalError&) {
    throw NumericalError("StateEstimator: measurement matrix is rank deficient");
  }
}

StateVector StateEstimator::estimate(const Eigen::VectorXd& z) const {
  if (z.size() != h_.rows()) throw std::invalid_argument("estimate: z length does not match h");
  return normal_.solve(Eigen::VectorXd(h_.transpose() * z));
}

double StateEstimator::residual_sq(const Eigen::VectorXd& z) const {
  return (z - h_ * estimate(z)).squaredNorm();
}

EstimationResult StateEstimator::detect(const Eigen::VectorXd& z, const BddConfig& bdd) const {
  EstimationResult r;
  r.theta_hat = estimate(z);
  r.residual_sq = (z - h_ * r.theta_hat).squaredNorm();
  r.alarm = r.residual_sq >= bdd.threshold_zeta;
  return r;
}

StateVector estimate_state(const MeasurementMatrix& h, const Eigen::VectorXd& z) {
  return StateEstimator(h.h).estimate(z);
}

double residual_sq(const MeasurementMatrix& h, const Eigen::VectorXd& z) {
  return StateEstimator(h.h).residual_sq(z);
}

BddConfig calibrate_bdd(int m, int n, double fp_rate, double sigma_n) {
  if (!(fp_rate > 0.0 && fp_rate < 1.0))
    throw std::invalid_argument("calibrate_bdd: fp_rate must lie in (0, 1)");
  if (!(sigma_n > 0.0)) throw std::invalid_argument("calibrate_bdd: sigma_n must be positive");
  if (m - n < 1) throw std::invalid_argument("calibrate_bdd: need M > n");
  BddConfig b;
  b.false_positive_rate = fp_rate;
  b.df = m - n;
  b.sigma_n = sigma_n;
  b.threshold_zeta = sigma_n * sigma_n * chi2_quantile(1.0 - fp_rate, b.df);
  return b;
}

EstimationResult inject_and_detect(const MeasurementMatrix& h, const Eigen::VectorXd& z,
                                   const Eigen::VectorXd& a, const BddConfig& bdd) {
  if (a.size() != z.size()) throw std::invalid_argument("inject_and_detect: attack length mismatch");
  return StateEstimator(h.h).detect(z + a, bdd);
}

}  // namespace fdi
