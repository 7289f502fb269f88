#include "fdi/spiked_rmt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "fdi/error.hpp"
#include "fdi/numerics.hpp"

namespace fdi {

MpEdges mp_edges(double p) {
  if (!(p > 0.0)) throw std::invalid_argument("mp_edges: p must be positive");
  const double r = std::sqrt(p);
  return {(1.0 - r) * (1.0 - r), (1.0 + r) * (1.0 + r)};
}

double mp_cdf(double x, double p) {
  const MpEdges e = mp_edges(p);
  const double atom = p > 1.0 ? 1.0 - 1.0 / p : 0.0;
  if (x < 0.0) return 0.0;
  if (x <= e.a_minus) return atom;
  if (x >= e.b_plus) return 1.0;

  // x = c - r cos(phi) maps [0, pi] onto [a, b] and removes the square-root endpoints.
  const double c = 1.0 + p;
  const double r = 2.0 * std::sqrt(p);
  const double phi_end = std::acos(std::clamp((c - x) / r, -1.0, 1.0));
  auto f = [&](double phi) {
    const double s = std::sin(phi);
    return r * r * s * s / (2.0 * std::numbers::pi * p * (c - r * std::cos(phi)));
  };
  constexpr int n = 2048;
  const double h = phi_end / n;
  double sum = f(0.0) + f(phi_end);
  for (int i = 1; i < n; ++i) sum += (i % 2 ? 4.0 : 2.0) * f(i * h);
  return std::min(1.0, atom + sum * h / 3.0);
}

double mp_quantile(double q, double p) {
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("mp_quantile: q must lie in [0, 1]");
  const MpEdges e = mp_edges(p);
  const double atom = p > 1.0 ? 1.0 - 1.0 / p : 0.0;
  if (q <= atom) return 0.0;
  double lo = e.a_minus;
  double hi = e.b_plus;
  for (int it = 0; it < 100 && hi - lo > 1e-13 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mp_cdf(mid, p) < q) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& z) {
  if (z.cols() < 2) throw std::invalid_argument("sample_covariance: need at least 2 snapshots");
  const Eigen::VectorXd mean = z.rowwise().mean();
  const Eigen::MatrixXd centered = z.colwise() - mean;
  Eigen::MatrixXd cov = (centered * centered.transpose()) / static_cast<double>(z.cols() - 1);
  return 0.5 * (cov + cov.transpose());
}

Eigen::MatrixXd sample_covariance(const MeasurementTrace& trace) {
  return sample_covariance(trace.z);
}

int count_spikes(const Eigen::VectorXd& eigenvalues, double p, double margin) {
  const double edge = mp_edges(p).b_plus + margin;
  int s = 0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i)
    if (eigenvalues(i) > edge) ++s;
  return s;
}

double estimate_spike_mu(double lambda_hat, double p) {
  if (!(p >= 0.0)) throw std::invalid_argument("estimate_spike_mu: p must be nonnegative");
  const double r = std::sqrt(p);
  const double edge = (1.0 + r) * (1.0 + r);
  if (!(lambda_hat >= edge * (1.0 - 1e-12)))
    throw std::invalid_argument("estimate_spike_mu: eigenvalue is not above the bulk edge");
  const double b = lambda_hat + 1.0 - p;
  const double disc = std::max(0.0, b * b - 4.0 * lambda_hat);
  return 0.5 * (b + std::sqrt(disc)) - 1.0;
}

double spike_location(double mu, double p) {
  if (!(mu > 0.0)) throw std::invalid_argument("spike_location: mu must be positive");
  return 1.0 + mu + p * (1.0 + mu) / mu;
}

double estimate_omega(double mu_hat, double p) {
  if (!(p >= 0.0)) throw std::invalid_argument("estimate_omega: p must be nonnegative");
  if (!(mu_hat > 0.0) || !(mu_hat >= std::sqrt(p) * (1.0 - 1e-12)))
    throw std::invalid_argument("estimate_omega: mu_hat is below the phase transition");
  const double w = (1.0 - p / (mu_hat * mu_hat)) / (1.0 + p / mu_hat);
  return std::max(0.0, w);
}

double estimate_noise_sigma(const Eigen::VectorXd& raw, double p) {
  const Eigen::Index m = raw.size();
  if (m < 2) throw std::invalid_argument("estimate_noise_sigma: need at least 2 eigenvalues");
  const double t = static_cast<double>(m) / p;
  const double b_plus = mp_edges(p).b_plus;

  auto quantile_of = [&](Eigen::Index count, double bulk_p) {
    // Empirical and MP quantiles of the lowest `count` eigenvalues at the bulk's midpoint.
    const double atom = bulk_p > 1.0 ? 1.0 - 1.0 / bulk_p : 0.0;
    const double q = atom + 0.5 * (1.0 - atom);
    Eigen::Index k = static_cast<Eigen::Index>(std::floor(q * static_cast<double>(count - 1)));
    k = std::clamp<Eigen::Index>(k, 0, count - 1);
    // raw is descending; the k-th smallest of the bulk sits at index (m - 1 - k).
    const double empirical = raw(m - 1 - k);
    return empirical / mp_quantile(q, bulk_p);
  };

  double sigma_sq = quantile_of(m, p);
  for (int it = 0; it < 50; ++it) {
    Eigen::Index spikes = 0;
    while (spikes < m - 1 && raw(spikes) > sigma_sq * b_plus) ++spikes;
    const Eigen::Index bulk = m - spikes;
    const double next = quantile_of(bulk, static_cast<double>(bulk) / t);
    if (std::abs(next - sigma_sq) <= 1e-12 * sigma_sq) {
      sigma_sq = next;
      break;
    }
    sigma_sq = next;
  }
  if (!(sigma_sq > 0.0) || !std::isfinite(sigma_sq))
    throw NumericalError("estimate_noise_sigma: degenerate spectrum");
  return std::sqrt(sigma_sq);
}

SpikedEstimate learn_subspace(const Eigen::MatrixXd& z, double sigma_n, const LearnOptions& options) {
  if (z.cols() < 2) throw std::invalid_argument("learn_subspace: need at least 2 snapshots");
  if (!options.estimate_sigma_n && !(sigma_n > 0.0))
    throw std::invalid_argument("learn_subspace: sigma_n must be positive");

  SpikedEstimate est;
  const Eigen::Index m = z.rows();
  est.horizon_T = static_cast<int>(z.cols());
  est.p_ratio = static_cast<double>(m) / static_cast<double>(z.cols());
  est.sample_mean = z.rowwise().mean();

  Eigen::MatrixXd cov = sample_covariance(z);
  EigenDecomposition eig;
  if (options.estimate_sigma_n) {
    eig = sym_eig(cov);
    est.sigma_n = estimate_noise_sigma(eig.eigenvalues, est.p_ratio);
    eig.eigenvalues /= est.sigma_n * est.sigma_n;
  } else {
    est.sigma_n = sigma_n;
    cov /= sigma_n * sigma_n;
    eig = sym_eig(cov);
  }

  est.eigenvalues = eig.eigenvalues;
  est.s = count_spikes(eig.eigenvalues, est.p_ratio, options.spike_margin);
  est.lambda_hat = eig.eigenvalues.head(est.s);
  est.mu_hat.resize(est.s);
  est.omega_hat.resize(est.s);
  for (int i = 0; i < est.s; ++i) {
    est.mu_hat(i) = estimate_spike_mu(est.lambda_hat(i), est.p_ratio);
    est.omega_hat(i) = estimate_omega(est.mu_hat(i), est.p_ratio);
  }
  const Eigen::Index kept = std::min<Eigen::Index>(m, std::max(est.s, options.keep_modes));
  est.u_hat = eig.eigenvectors.leftCols(kept);
  return est;
}

SpikedEstimate learn_subspace(const MeasurementTrace& trace, double sigma_n,
                              const LearnOptions& options) {
  return learn_subspace(trace.z, sigma_n, options);
}

ModeTable mode_table(const SpikedEstimate& est, int modes) {
  if (modes < 0 || modes > est.kept_modes())
    throw std::invalid_argument("mode_table: requested more modes than the estimate keeps");
  ModeTable t;
  t.mu_hat.resize(modes);
  t.omega_hat.resize(modes);
  t.consistent.assign(static_cast<std::size_t>(modes), false);
  for (int i = 0; i < modes; ++i) {
    if (i < est.s) {
      t.mu_hat(i) = est.mu_hat(i);
      t.omega_hat(i) = est.omega_hat(i);
      t.consistent[static_cast<std::size_t>(i)] = true;
    } else if (est.s > 0) {
      t.mu_hat(i) = est.mu_hat(est.s - 1);
      t.omega_hat(i) = est.omega_hat(est.s - 1);
    } else {
      // No spike at all: classical plug-in values.
      t.mu_hat(i) = std::max(est.eigenvalues(i) - 1.0, 1e-12);
      t.omega_hat(i) = 1.0;
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vec_from(const json& a, const char* name) {
  if (!a.is_array()) throw ParseError(std::string("spiked estimate: '") + name + "' must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

}  // namespace

std::string spiked_estimate_to_json(const SpikedEstimate& est) {
  json doc;
  doc["p_ratio"] = est.p_ratio;
  doc["sigma_n"] = est.sigma_n;
  doc["horizon_T"] = est.horizon_T;
  doc["s"] = est.s;
  doc["eigenvalues"] = vec(est.eigenvalues);
  doc["lambda_hat"] = vec(est.lambda_hat);
  doc["mu_hat"] = vec(est.mu_hat);
  doc["omega_hat"] = vec(est.omega_hat);
  doc["sample_mean"] = vec(est.sample_mean);
  json u = json::array();
  for (Eigen::Index r = 0; r < est.u_hat.rows(); ++r) u.push_back(vec(est.u_hat.row(r).transpose()));
  doc["u_hat"] = std::move(u);
  return doc.dump() + "\n";
}

SpikedEstimate spiked_estimate_from_json(const std::string& text) {
  SpikedEstimate est;
  try {
    const json doc = json::parse(text);
    est.p_ratio = doc.at("p_ratio").get<double>();
    est.sigma_n = doc.at("sigma_n").get<double>();
    est.horizon_T = doc.at("horizon_T").get<int>();
    est.s = doc.at("s").get<int>();
    est.eigenvalues = vec_from(doc.at("eigenvalues"), "eigenvalues");
    est.lambda_hat = vec_from(doc.at("lambda_hat"), "lambda_hat");
    est.mu_hat = vec_from(doc.at("mu_hat"), "mu_hat");
    est.omega_hat = vec_from(doc.at("omega_hat"), "omega_hat");
    est.sample_mean = vec_from(doc.at("sample_mean"), "sample_mean");
    const json& u = doc.at("u_hat");
    const Eigen::Index rows = static_cast<Eigen::Index>(u.size());
    const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(u[0].size()) : 0;
    est.u_hat.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (static_cast<Eigen::Index>(u[r].size()) != cols) throw ParseError("spiked estimate: ragged u_hat");
      for (Eigen::Index c = 0; c < cols; ++c) est.u_hat(r, c) = u[r][c].get<double>();
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("spiked estimate: ") + e.what());
  }
  if (est.s < 0 || est.mu_hat.size() != est.s || est.omega_hat.size() != est.s ||
      est.lambda_hat.size() != est.s || est.u_hat.cols() < est.s)
    throw ParseError("spiked estimate: inconsistent spike count");
  return est;
}

}  // namespace fdi
