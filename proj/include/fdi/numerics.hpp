#pragma once

#include <cstdint>
#include <random>
#include <variant>

#include <Eigen/Dense>

namespace fdi {

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)
// ---------------------------------------------------------------------------

/// Eigenpairs of a real symmetric matrix. Eigenvalues are sorted in descending order and
/// column i of `eigenvectors` belongs to eigenvalue i. Each eigenvector is signed so that
/// its entry of largest magnitude is nonnegative (first such entry on ties).
struct EigenDecomposition {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;
};

struct JacobiOptions {
  int max_sweeps = 100;
  /// Converged once the off-diagonal Frobenius norm falls below tolerance * ||A||_F.
  double tolerance = 1e-15;
};

/// Throws NumericalError when the sweep cap is hit; the message carries the achieved
/// off-diagonal norm.
EigenDecomposition sym_eig(const Eigen::MatrixXd& a, const JacobiOptions& options = {});

/// Flips column signs in place per the convention above.
void fix_eigenvector_signs(Eigen::MatrixXd& vectors);

// ---------------------------------------------------------------------------
// Gamma / chi-square family
// ---------------------------------------------------------------------------

/// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);
/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), computed without cancellation.
double gamma_q(double a, double x);

double chi2_cdf(double x, double df);
double chi2_sf(double x, double df);
/// Inverse of chi2_cdf; requires 0 < q < 1.
double chi2_quantile(double q, double df);

/// P(X >= x) for X ~ noncentral chi-square(df, nu), as a Poisson(nu/2) mixture of central
/// chi-square tails truncated once the unvisited Poisson mass drops below 1e-12.
double noncentral_chi2_sf(double x, double df, double nu);

// ---------------------------------------------------------------------------
// Dense linear programming
// ---------------------------------------------------------------------------

/// minimize c'x subject to A x = b, x >= 0.
struct LpProblem {
  Eigen::VectorXd objective;
  Eigen::MatrixXd a_eq;
  Eigen::VectorXd b_eq;
};

struct LpSolution {
  Eigen::VectorXd x;
  double objective = 0.0;
};
struct LpInfeasible {};
struct LpUnbounded {};

using LpResult = std::variant<LpSolution, LpInfeasible, LpUnbounded>;

/// Two-phase tableau simplex: Dantzig pricing, with Bland's rule after a run of degenerate
/// pivots so the method cannot cycle. Returns an optimal basic feasible solution.
LpResult solve_lp(const LpProblem& p);

// ---------------------------------------------------------------------------
// Linear solves
// ---------------------------------------------------------------------------

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
class Cholesky {
public:
  Cholesky() = default;
  explicit Cholesky(const Eigen::MatrixXd& a);  // throws NumericalError if not SPD

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;
  const Eigen::MatrixXd& factor() const { return l_; }
  Eigen::Index size() const { return l_.rows(); }

private:
  Eigen::MatrixXd l_;
};

Eigen::VectorXd solve_spd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b);

// ---------------------------------------------------------------------------
// Seeded random streams
// ---------------------------------------------------------------------------

/// Mixes a master seed with a stream index (splitmix64 finalizer over both words).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// Deterministic stream of standard normal draws. Uses mt19937_64 plus a fixed polar
/// transform so the sequence does not depend on the standard library's distributions.
/// Single owner: not safe to share across threads.
class GaussianStream {
public:
  explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

  double next();
  /// Uniform on [0, 1) from the same engine.
  double uniform();
  void fill(Eigen::Ref<Eigen::VectorXd> out);

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fdi
