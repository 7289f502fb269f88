#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fdi/simulator.hpp"

namespace fdi {

/// Bulk support of the Marcenko-Pastur law for aspect ratio p = M / T.
struct MpEdges {
  double a_minus = 0.0;
  double b_plus = 0.0;
};

MpEdges mp_edges(double p);

/// CDF of the Marcenko-Pastur law (unit variance) including the atom at zero when p > 1.
double mp_cdf(double x, double p);
double mp_quantile(double q, double p);

/// Unbiased sample covariance (1/(T-1)) sum (z - zbar)(z - zbar)'.
Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& z);
Eigen::MatrixXd sample_covariance(const MeasurementTrace& trace);

/// Number of eigenvalues (descending, normalized by sigma_n^2) strictly above
/// (1 + sqrt(p))^2 + margin.
int count_spikes(const Eigen::VectorXd& eigenvalues, double p, double margin = 0.0);

/// Inverts the spike location map lambda = 1 + mu + p (1 + mu) / mu on (b_plus, inf).
double estimate_spike_mu(double lambda_hat, double p);
/// Forward spike location map; used to check the inversion.
double spike_location(double mu, double p);
/// Squared projection estimate (1 - p / mu^2) / (1 + p / mu), in (0, 1) for mu > sqrt(p).
double estimate_omega(double mu_hat, double p);

/// Attacker-side spectral estimate learned from one measurement window.
struct SpikedEstimate {
  double p_ratio = 0.0;
  double sigma_n = 1.0;
  int horizon_T = 0;
  int s = 0;
  Eigen::VectorXd eigenvalues;  // all normalized sample eigenvalues, descending
  Eigen::VectorXd lambda_hat;   // first s eigenvalues
  Eigen::VectorXd mu_hat;       // length s
  Eigen::VectorXd omega_hat;    // length s
  Eigen::MatrixXd u_hat;        // M x k sample eigenvectors, k >= s (extra modes kept on request)
  Eigen::VectorXd sample_mean;  // length M

  bool recoverable() const { return s > 0; }
  Eigen::Index sensors() const { return u_hat.rows(); }
  Eigen::Index kept_modes() const { return u_hat.cols(); }
  /// First s columns of u_hat.
  Eigen::MatrixXd subspace() const { return u_hat.leftCols(s); }
};

struct LearnOptions {
  /// Extra safety margin added to the MP edge when counting spikes.
  double spike_margin = 0.0;
  /// Keep at least this many leading eigenvectors even when s is smaller (baselines that
  /// use the full estimated column space need them).
  int keep_modes = 0;
  /// When true, sigma_n is ignored and re-estimated from the lower part of the bulk.
  bool estimate_sigma_n = false;
};

/// Normalizes the sample covariance by sigma_n^2, eigendecomposes it and derives s, mu_hat
/// and omega_hat. s == 0 is a valid "no recoverable subspace" outcome.
SpikedEstimate learn_subspace(const Eigen::MatrixXd& z, double sigma_n,
                              const LearnOptions& options = {});
SpikedEstimate learn_subspace(const MeasurementTrace& trace, double sigma_n,
                              const LearnOptions& options = {});

/// Noise level estimate from the sample spectrum: matches a lower bulk quantile of the
/// unnormalized eigenvalues to the corresponding Marcenko-Pastur quantile.
double estimate_noise_sigma(const Eigen::VectorXd& raw_eigenvalues_desc, double p);

/// mu_hat / omega_hat over the first `modes` sample eigenmodes. Modes i <= s use the spike
/// estimators. Beyond s the inversion has no real solution (lambda_hat <= b_plus), so those
/// modes carry the values of mode s forward; `consistent[i]` marks which rule applied.
struct ModeTable {
  Eigen::VectorXd mu_hat;
  Eigen::VectorXd omega_hat;
  std::vector<bool> consistent;
};

ModeTable mode_table(const SpikedEstimate& est, int modes);

std::string spiked_estimate_to_json(const SpikedEstimate& est);
SpikedEstimate spiked_estimate_from_json(const std::string& text);

}  // namespace fdi
