#include "fdi/attack.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "fdi/error.hpp"
#include "fdi/numerics.hpp"

namespace fdi {

std::string Construction::to_string() const {
  switch (kind) {
    case ConstructionKind::optimal_mode1: return "optimal_mode1";
    case ConstructionKind::eigenmode: return "eigenmode:" + std::to_string(index);
    case ConstructionKind::full_subspace: return "full_subspace:" + std::to_string(index);
    case ConstructionKind::sparse: return "sparse:" + std::to_string(index);
  }
  return {};
}

Construction Construction::parse(const std::string& text) {
  if (text == "optimal_mode1") return {ConstructionKind::optimal_mode1, 1};
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ParseError("unknown construction '" + text + "'");
  const std::string head = text.substr(0, colon);
  const std::string tail = text.substr(colon + 1);
  char* end = nullptr;
  const long idx = std::strtol(tail.c_str(), &end, 10);
  if (tail.empty() || *end != '\0' || idx < 1) throw ParseError("bad construction index in '" + text + "'");
  Construction c;
  c.index = static_cast<int>(idx);
  if (head == "eigenmode") c.kind = ConstructionKind::eigenmode;
  else if (head == "full_subspace") c.kind = ConstructionKind::full_subspace;
  else if (head == "sparse") c.kind = ConstructionKind::sparse;
  else throw ParseError("unknown construction '" + text + "'");
  return c;
}

AttackerStateVarEstimate estimate_state_variation(const Eigen::MatrixXd& angle_history) {
  if (angle_history.cols() < 2 || angle_history.rows() < 1)
    throw std::invalid_argument("estimate_state_variation: need at least 2 snapshots");
  const Eigen::MatrixXd centered = angle_history.colwise() - angle_history.rowwise().mean();
  const double dof = static_cast<double>(angle_history.rows()) * static_cast<double>(angle_history.cols() - 1);
  return {std::sqrt(centered.squaredNorm() / dof)};
}

namespace {

double signal_ratio_sq(const SpikedEstimate& est, const AttackerStateVarEstimate& sv) {
  if (!(sv.sigma_theta_hat > 0.0)) throw std::invalid_argument("sigma_theta_hat must be positive");
  const double r = sv.sigma_theta_hat / est.sigma_n;
  return r * r;
}

void require_s(const SpikedEstimate& est) {
  if (est.s < 1) throw NumericalError("no recoverable subspace (s = 0)");
}

// c_i for a single-mode attack that lands exactly on the impact target.
double single_mode_coefficient(double tau, double ratio_sq, double mu, double omega) {
  if (!(omega > 0.0) || !(mu > 0.0)) throw NumericalError("mode has no estimated signal (omega <= 0)");
  return std::sqrt(tau / (ratio_sq * omega / mu));
}

}  // namespace

double noncentrality_estimate(const SpikedEstimate& est, const Eigen::VectorXd& c) {
  if (c.size() != est.s) throw std::invalid_argument("noncentrality_estimate: |c| must equal s");
  return ((1.0 - est.omega_hat.array()) * c.array().square()).sum();
}

double state_error_estimate(const SpikedEstimate& est, const Eigen::VectorXd& c,
                            const AttackerStateVarEstimate& sv) {
  if (c.size() != est.s) throw std::invalid_argument("state_error_estimate: |c| must equal s");
  return signal_ratio_sq(est, sv) *
         (est.omega_hat.array() / est.mu_hat.array() * c.array().square()).sum();
}

double predicted_detection_probability(double nu_hat, const BddConfig& bdd) {
  if (!(nu_hat >= 0.0)) throw std::invalid_argument("predicted_detection_probability: nu_hat < 0");
  return noncentral_chi2_sf(bdd.normalized_threshold(), bdd.df, nu_hat);
}

AttackVector assemble_attack(const SpikedEstimate& est, const ModeTable& table,
                             std::vector<int> modes, const Eigen::VectorXd& coefficients,
                             double tau, Construction construction, const BddConfig& bdd) {
  if (static_cast<Eigen::Index>(modes.size()) != coefficients.size())
    throw std::invalid_argument("assemble_attack: one coefficient per mode required");
  AttackVector out;
  out.a = Eigen::VectorXd::Zero(est.sensors());
  double nu = 0.0;
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const int i = modes[k];
    if (i < 1 || i > table.mu_hat.size() || i > est.kept_modes())
      throw std::invalid_argument("assemble_attack: mode index out of range");
    const double c = coefficients(static_cast<Eigen::Index>(k));
    out.a += c * est.u_hat.col(i - 1);
    nu += (1.0 - table.omega_hat(i - 1)) * c * c;
  }
  out.a *= est.sigma_n;
  out.coefficients = coefficients;
  out.modes = std::move(modes);
  out.target_tau = tau;
  out.predicted_nu = nu;
  out.predicted_detection_prob = predicted_detection_probability(nu, bdd);
  out.construction = construction;
  return out;
}

AttackVector eigenmode_attack_extended(const SpikedEstimate& est, int i, int modes, double tau,
                                       const AttackerStateVarEstimate& sv, const BddConfig& bdd) {
  if (!(tau > 0.0)) throw std::invalid_argument("attack: tau must be positive");
  if (i < 1 || i > modes) throw std::invalid_argument("eigenmode_attack: mode index out of range");
  const ModeTable table = mode_table(est, modes);
  Eigen::VectorXd c(1);
  c(0) = single_mode_coefficient(tau, signal_ratio_sq(est, sv), table.mu_hat(i - 1), table.omega_hat(i - 1));
  return assemble_attack(est, table, {i}, c, tau, {ConstructionKind::eigenmode, i}, bdd);
}

AttackVector eigenmode_attack(const SpikedEstimate& est, int i, double tau,
                              const AttackerStateVarEstimate& sv, const BddConfig& bdd) {
  require_s(est);
  if (i < 1 || i > est.s) throw std::invalid_argument("eigenmode_attack: mode index out of range");
  return eigenmode_attack_extended(est, i, est.s, tau, sv, bdd);
}

AttackVector optimal_attack(const SpikedEstimate& est, double tau, const AttackerStateVarEstimate& sv,
                            const BddConfig& bdd) {
  require_s(est);
  AttackVector a = eigenmode_attack(est, 1, tau, sv, bdd);
  a.construction = {ConstructionKind::optimal_mode1, 1};
  return a;
}

AttackVector full_subspace_attack(const SpikedEstimate& est, int modes, double tau,
                                  const AttackerStateVarEstimate& sv, const BddConfig& bdd) {
  if (modes < 1) throw std::invalid_argument("full_subspace_attack: need at least one mode");
  if (!(tau >= 0.0)) throw std::invalid_argument("full_subspace_attack: tau must be nonnegative");
  const ModeTable table = mode_table(est, modes);
  const double ratio_sq = signal_ratio_sq(est, sv);
  Eigen::VectorXd c(modes);
  std::vector<int> idx(static_cast<std::size_t>(modes));
  for (int i = 0; i < modes; ++i) {
    idx[static_cast<std::size_t>(i)] = i + 1;
    c(i) = single_mode_coefficient(tau / modes, ratio_sq, table.mu_hat(i), table.omega_hat(i));
  }
  return assemble_attack(est, table, std::move(idx), c, tau,
                         {ConstructionKind::full_subspace, modes}, bdd);
}

EstimationResult inject_and_detect(const MeasurementMatrix& h, const Eigen::VectorXd& z,
                                   const AttackVector& attack, const BddConfig& bdd) {
  return inject_and_detect(h, z, attack.a, bdd);
}

double empirical_detection_rate(const StateEstimator& estimator, const StateVector& theta_bar,
                                double sigma_theta, const AttackVector& attack,
                                const BddConfig& bdd, int trials, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("empirical_detection_rate: trials must be positive");
  const Eigen::MatrixXd& h = estimator.h();
  if (attack.a.size() != h.rows() || theta_bar.size() != h.cols())
    throw std::invalid_argument("empirical_detection_rate: dimension mismatch");
  int alarms = 0;
  Eigen::VectorXd theta(h.cols());
  Eigen::VectorXd noise(h.rows());
  for (int t = 0; t < trials; ++t) {
    GaussianStream stream(derive_seed(seed, static_cast<std::uint64_t>(t)));
    stream.fill(theta);
    stream.fill(noise);
    const Eigen::VectorXd z = h * (theta_bar + sigma_theta * theta) + bdd.sigma_n * noise + attack.a;
    if (estimator.detect(z, bdd).alarm) ++alarms;
  }
  return static_cast<double>(alarms) / trials;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

std::string attack_to_json(const AttackVector& attack) {
  using nlohmann::json;
  json doc;
  doc["a"] = std::vector<double>(attack.a.data(), attack.a.data() + attack.a.size());
  doc["coefficients"] = std::vector<double>(attack.coefficients.data(),
                                            attack.coefficients.data() + attack.coefficients.size());
  doc["modes"] = attack.modes;
  doc["target_tau"] = attack.target_tau;
  doc["predicted_nu"] = attack.predicted_nu;
  doc["predicted_detection_prob"] = attack.predicted_detection_prob;
  doc["construction"] = attack.construction.to_string();
  return doc.dump(2) + "\n";
}

AttackVector attack_from_json(const std::string& text) {
  using nlohmann::json;
  AttackVector out;
  try {
    const json doc = json::parse(text);
    const auto a = doc.at("a").get<std::vector<double>>();
    const auto c = doc.at("coefficients").get<std::vector<double>>();
    out.a = Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
    out.coefficients = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
    out.modes = doc.at("modes").get<std::vector<int>>();
    out.target_tau = doc.at("target_tau").get<double>();
    out.predicted_nu = doc.at("predicted_nu").get<double>();
    out.predicted_detection_prob = doc.at("predicted_detection_prob").get<double>();
    out.construction = Construction::parse(doc.at("construction").get<std::string>());
  } catch (const json::exception& e) {
    throw ParseError(std::string("attack JSON: ") + e.what());
  }
  if (out.modes.size() != static_cast<std::size_t>(out.coefficients.size()))
    throw ParseError("attack JSON: modes and coefficients differ in length");
  return out;
}

}  // namespace fdi
