#include "fdi/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "fdi/error.hpp"

namespace fdi {

// ---------------------------------------------------------------------------
// Jacobi
// ---------------------------------------------------------------------------

void fix_eigenvector_signs(Eigen::MatrixXd& vectors) {
  for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
      const double v = std::abs(vectors(i, j));
      if (v > best_abs) {
        best_abs = v;
        best = i;
      }
    }
    if (vectors.rows() > 0 && vectors(best, j) < 0.0) vectors.col(j) = -vectors.col(j);
  }
}

namespace {

void rotate_rows(double* x, double* y, std::size_t m, double c, double s) {
  for (std::size_t k = 0; k < m; ++k) {
    const double xk = x[k];
    const double yk = y[k];
    x[k] = c * xk - s * yk;
    y[k] = s * xk + c * yk;
  }
}

}  // namespace

EigenDecomposition sym_eig(const Eigen::MatrixXd& input, const JacobiOptions& options) {
  if (input.rows() != input.cols()) throw std::invalid_argument("sym_eig: matrix is not square");
  const std::size_t m = static_cast<std::size_t>(input.rows());
  EigenDecomposition out;
  if (m == 0) return out;

  // Row-major working copies; `v` holds eigenvectors as rows so rotations stay contiguous.
  std::vector<double> a(m * m);
  std::vector<double> v(m * m, 0.0);
  double frob_sq = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    v[i * m + i] = 1.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double x = 0.5 * (input(i, j) + input(j, i));
      a[i * m + j] = x;
      frob_sq += x * x;
    }
  }
  if (!std::isfinite(frob_sq)) throw NumericalError("sym_eig: matrix has non-finite entries");

  const double frob = std::sqrt(frob_sq);
  auto off_norm = [&] {
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j) sum += a[i * m + j] * a[i * m + j];
    return std::sqrt(2.0 * sum);
  };

  struct Rotation {
    std::size_t p, q;
    double c, s;
  };
  const std::size_t players = m + (m % 2);
  std::vector<std::size_t> seat(players);
  std::iota(seat.begin(), seat.end(), 0);
  std::vector<Rotation> rot(players / 2);

  bool converged = frob == 0.0;
  double achieved = 0.0;
  for (int sweep = 0; sweep < options.max_sweeps && !converged; ++sweep) {
    achieved = off_norm();
    if (achieved <= options.tolerance * frob) {
      converged = true;
      break;
    }
    // Round-robin ordering: each round rotates m/2 disjoint pairs, so the row pass (J'A)
    // and the column pass (.J) can both sweep memory contiguously.
    for (std::size_t round = 0; round + 1 < players; ++round) {
      std::size_t count = 0;
      for (std::size_t i = 0; i < players / 2; ++i) {
        std::size_t p = seat[i];
        std::size_t q = seat[players - 1 - i];
        if (p >= m || q >= m) continue;  // bye when m is odd
        if (p > q) std::swap(p, q);
        const double apq = a[p * m + q];
        const double app = a[p * m + p];
        const double aqq = a[q * m + q];
        // Late sweeps: drop elements that no longer change either diagonal entry.
        if (sweep > 3 && std::abs(app) + 100.0 * std::abs(apq) == std::abs(app) &&
            std::abs(aqq) + 100.0 * std::abs(apq) == std::abs(aqq)) {
          a[p * m + q] = 0.0;
          a[q * m + p] = 0.0;
          continue;
        }
        if (apq == 0.0) continue;
        const double theta = (aqq - app) / (2.0 * apq);
        double t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        if (theta < 0.0) t = -t;
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        rot[count++] = {p, q, c, t * c};
      }
      // Circle method: seat 0 stays, the rest rotate by one.
      std::rotate(seat.begin() + 1, seat.end() - 1, seat.end());
      if (count == 0) continue;

      for (std::size_t r = 0; r < count; ++r) {
        const Rotation& g = rot[r];
        rotate_rows(&a[g.p * m], &a[g.q * m], m, g.c, g.s);
        rotate_rows(&v[g.p * m], &v[g.q * m], m, g.c, g.s);
      }
      for (std::size_t k = 0; k < m; ++k) {
        double* row = &a[k * m];
        for (std::size_t r = 0; r < count; ++r) {
          const Rotation& g = rot[r];
          const double x = row[g.p];
          const double y = row[g.q];
          row[g.p] = g.c * x - g.s * y;
          row[g.q] = g.s * x + g.c * y;
        }
      }
      for (std::size_t r = 0; r < count; ++r) {
        a[rot[r].p * m + rot[r].q] = 0.0;
        a[rot[r].q * m + rot[r].p] = 0.0;
      }
    }
  }
  if (!converged) {
    achieved = off_norm();
    if (achieved > options.tolerance * frob) {
      std::ostringstream msg;
      msg << "sym_eig: no convergence after " << options.max_sweeps
          << " sweeps (off-diagonal norm " << achieved << ", matrix norm " << frob << ")";
      throw NumericalError(msg.str());
    }
  }

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a[i * m + i] > a[j * m + j];
  });

  out.eigenvalues.resize(static_cast<Eigen::Index>(m));
  out.eigenvectors.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t col = 0; col < m; ++col) {
    const std::size_t src = order[col];
    out.eigenvalues(col) = a[src * m + src];
    for (std::size_t k = 0; k < m; ++k) out.eigenvectors(k, col) = v[src * m + k];
  }
  fix_eigenvector_signs(out.eigenvectors);
  return out;
}

// ---------------------------------------------------------------------------
// Incomplete gamma
// ---------------------------------------------------------------------------

namespace {

constexpr double kGammaEps = 1e-16;
constexpr int kGammaMaxIter = 100000;

// Series for P(a, x), valid for x < a + 1.
double gamma_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < kGammaMaxIter; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * kGammaEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Lentz continued fraction for Q(a, x), valid for x >= a + 1.
double gamma_continued_fraction(double a, double x) {
  constexpr double tiny = std::numeric_limits<double>::min() / kGammaEps;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kGammaMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kGammaEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

void check_gamma_args(double a, double x) {
  if (!(a > 0.0)) throw std::invalid_argument("incomplete gamma: shape must be positive");
  if (!(x >= 0.0)) throw std::invalid_argument("incomplete gamma: x must be nonnegative");
}

}  // namespace

double gamma_p(double a, double x) {
  check_gamma_args(a, x);
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  return x < a + 1.0 ? gamma_series(a, x) : 1.0 - gamma_continued_fraction(a, x);
}

double gamma_q(double a, double x) {
  check_gamma_args(a, x);
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return x < a + 1.0 ? 1.0 - gamma_series(a, x) : gamma_continued_fraction(a, x);
}

double chi2_cdf(double x, double df) {
  if (!(df > 0.0)) throw std::invalid_argument("chi2_cdf: df must be positive");
  if (x <= 0.0) return 0.0;
  return gamma_p(0.5 * df, 0.5 * x);
}

double chi2_sf(double x, double df) {
  if (!(df > 0.0)) throw std::invalid_argument("chi2_sf: df must be positive");
  if (x <= 0.0) return 1.0;
  return gamma_q(0.5 * df, 0.5 * x);
}

double chi2_quantile(double q, double df) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("chi2_quantile: q must lie in (0, 1)");
  if (!(df > 0.0)) throw std::invalid_argument("chi2_quantile: df must be positive");

  // Bisection on whichever tail is small, so both q -> 0 and q -> 1 keep relative accuracy.
  const bool upper = q > 0.5;
  const double target = upper ? 1.0 - q : q;
  auto tail = [&](double x) { return upper ? chi2_sf(x, df) : chi2_cdf(x, df); };
  // f(x) > 0 means x lies beyond the quantile.
  auto beyond = [&](double x) { return upper ? tail(x) < target : tail(x) > target; };

  double hi = std::max(df, 1.0);
  while (!beyond(hi)) hi *= 2.0;
  double lo = hi;
  while (beyond(lo)) {
    lo *= 0.5;
    if (lo < std::numeric_limits<double>::min()) return lo;
  }
  for (int it = 0; it < 400 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (beyond(mid)) hi = mid;
    else lo = mid;
  }
  return 0.5 * (lo + hi);
}

double noncentral_chi2_sf(double x, double df, double nu) {
  if (!(x >= 0.0)) throw std::invalid_argument("noncentral_chi2_sf: x must be nonnegative");
  if (!(nu >= 0.0)) throw std::invalid_argument("noncentral_chi2_sf: nu must be nonnegative");
  if (!(df > 0.0)) throw std::invalid_argument("noncentral_chi2_sf: df must be positive");
  if (x == 0.0) return 1.0;
  if (nu == 0.0) return chi2_sf(x, df);
  if (std::isinf(nu)) return 1.0;

  constexpr double kTailMass = 1e-12;
  const double lambda = 0.5 * nu;
  const double half_x = 0.5 * x;
  const double log_lambda = std::log(lambda);
  auto log_weight = [&](double k) { return -lambda + k * log_lambda - std::lgamma(k + 1.0); };

  // Visit Poisson terms outward from the mode, always taking the heavier neighbour, until
  // the visited mass reaches 1 - kTailMass.
  const double mode = std::floor(lambda);
  double up = mode;
  double down = mode - 1.0;
  double w_up = std::exp(log_weight(up));
  double w_down = down >= 0.0 ? std::exp(log_weight(down)) : 0.0;
  double mass = 0.0;
  double sum = 0.0;
  for (int guard = 0; guard < 10'000'000; ++guard) {
    if (mass >= 1.0 - kTailMass) break;
    if (w_up <= 0.0 && w_down <= 0.0) break;
    if (w_up >= w_down) {
      sum += w_up * gamma_q(0.5 * df + up, half_x);
      mass += w_up;
      up += 1.0;
      w_up = std::exp(log_weight(up));
    } else {
      sum += w_down * gamma_q(0.5 * df + down, half_x);
      mass += w_down;
      down -= 1.0;
      w_down = down >= 0.0 ? std::exp(log_weight(down)) : 0.0;
    }
  }
  return std::clamp(sum, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Simplex
// ---------------------------------------------------------------------------

namespace {

constexpr double kPivotTol = 1e-11;
constexpr double kCostTol = 1e-11;

constexpr int kDegenerateStreak = 50;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Constraint rows 0..rows()-1, then one reduced-cost row; last column is the right-hand side.
class Tableau {
public:
  Tableau(RowMatrix t, std::vector<int> basis) : t_(std::move(t)), basis_(std::move(basis)) {}

  Eigen::Index rows() const { return t_.rows() - 1; }
  Eigen::Index rhs_col() const { return t_.cols() - 1; }
  RowMatrix& data() { return t_; }
  std::vector<int>& basis() { return basis_; }

  void pivot(Eigen::Index row, Eigen::Index col) {
    const double pv = t_(row, col);
    t_.row(row) /= pv;
    for (Eigen::Index r = 0; r < t_.rows(); ++r) {
      if (r == row) continue;
      const double f = t_(r, col);
      if (f != 0.0) t_.row(r) -= f * t_.row(row);
    }
    t_(row, col) = 1.0;
    basis_[static_cast<std::size_t>(row)] = static_cast<int>(col);
  }

  void drop_row(Eigen::Index row) {
    RowMatrix next(t_.rows() - 1, t_.cols());
    Eigen::Index dst = 0;
    for (Eigen::Index r = 0; r < t_.rows(); ++r)
      if (r != row) next.row(dst++) = t_.row(r);
    t_ = std::move(next);
    basis_.erase(basis_.begin() + row);
  }

  /// Minimizes cost' x over columns [0, allowed). Returns false when unbounded.
  /// Dantzig pricing; after a run of degenerate pivots, Bland's rule until progress resumes.
  bool optimize(const Eigen::VectorXd& cost, Eigen::Index allowed, int& iterations) {
    const Eigen::Index obj = rows();
    t_.row(obj).setZero();
    t_.row(obj).head(cost.size()) = cost.transpose();
    for (Eigen::Index r = 0; r < obj; ++r) {
      const double cb = cost(basis_[static_cast<std::size_t>(r)]);
      if (cb != 0.0) t_.row(obj) -= cb * t_.row(r);
    }
    int degenerate = 0;
    for (;;) {
      if (++iterations > 200000) throw NumericalError("solve_lp: iteration limit exceeded");
      const bool bland = degenerate >= kDegenerateStreak;
      Eigen::Index enter = -1;
      double most = -kCostTol;
      for (Eigen::Index j = 0; j < allowed; ++j) {
        const double reduced = t_(obj, j);
        if (reduced < most) {
          enter = j;
          most = reduced;
          if (bland) break;
        }
      }
      if (enter < 0) return true;

      Eigen::Index leave = -1;
      double best_ratio = 0.0;
      for (Eigen::Index r = 0; r < obj; ++r) {
        const double coef = t_(r, enter);
        if (coef <= kPivotTol) continue;
        const double ratio = t_(r, rhs_col()) / coef;
        if (leave < 0 || ratio < best_ratio - 1e-14 ||
            (std::abs(ratio - best_ratio) <= 1e-14 && basis_[r] < basis_[leave])) {
          leave = r;
          best_ratio = ratio;
        }
      }
      if (leave < 0) return false;
      degenerate = best_ratio <= 1e-14 ? degenerate + 1 : 0;
      pivot(leave, enter);
    }
  }

private:
  RowMatrix t_;
  std::vector<int> basis_;
};

}  // namespace

LpResult solve_lp(const LpProblem& p) {
  const Eigen::Index m = p.a_eq.rows();
  const Eigen::Index n = p.a_eq.cols();
  if (p.objective.size() != n || p.b_eq.size() != m)
    throw std::invalid_argument("solve_lp: inconsistent dimensions");
  if (!p.b_eq.allFinite() || !p.a_eq.allFinite() || !p.objective.allFinite())
    throw std::invalid_argument("solve_lp: non-finite data");

  if (m == 0) {
    if ((p.objective.array() < 0.0).any()) return LpUnbounded{};
    return LpSolution{Eigen::VectorXd::Zero(n), 0.0};
  }

  // Columns: n structural, m artificial, 1 right-hand side.
  RowMatrix t = RowMatrix::Zero(m + 1, n + m + 1);
  std::vector<int> basis(static_cast<std::size_t>(m));
  for (Eigen::Index r = 0; r < m; ++r) {
    const double sign = p.b_eq(r) < 0.0 ? -1.0 : 1.0;
    t.row(r).head(n) = sign * p.a_eq.row(r);
    t(r, n + r) = 1.0;
    t(r, n + m) = sign * p.b_eq(r);
    basis[static_cast<std::size_t>(r)] = static_cast<int>(n + r);
  }
  Tableau tab(std::move(t), std::move(basis));
  int iterations = 0;

  Eigen::VectorXd phase1 = Eigen::VectorXd::Zero(n + m);
  phase1.tail(m).setOnes();
  tab.optimize(phase1, n + m, iterations);

  const double scale = 1.0 + p.b_eq.cwiseAbs().maxCoeff();
  double infeasibility = 0.0;
  for (Eigen::Index r = 0; r < tab.rows(); ++r)
    if (tab.basis()[r] >= n) infeasibility += tab.data()(r, tab.rhs_col());
  if (infeasibility > 1e-9 * scale) return LpInfeasible{};

  // Pivot remaining (zero-level) artificials out of the basis; drop redundant rows.
  for (Eigen::Index r = tab.rows() - 1; r >= 0; --r) {
    if (tab.basis()[r] < n) continue;
    Eigen::Index col = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::abs(tab.data()(r, j)) > 1e-9) {
        col = j;
        break;
      }
    }
    if (col >= 0) tab.pivot(r, col);
    else tab.drop_row(r);
  }

  Eigen::VectorXd phase2 = Eigen::VectorXd::Zero(n + m);
  phase2.head(n) = p.objective;
  if (!tab.optimize(phase2, n, iterations)) return LpUnbounded{};

  LpSolution sol;
  sol.x = Eigen::VectorXd::Zero(n);
  for (Eigen::Index r = 0; r < tab.rows(); ++r) {
    const int b = tab.basis()[r];
    if (b < n) sol.x(b) = std::max(0.0, tab.data()(r, tab.rhs_col()));
  }
  sol.objective = p.objective.dot(sol.x);
  return sol;
}

// ---------------------------------------------------------------------------
// Cholesky
// ---------------------------------------------------------------------------

Cholesky::Cholesky(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("Cholesky: matrix is not square");
  const Eigen::Index n = a.rows();
  l_ = Eigen::MatrixXd::Zero(n, n);
  const double scale = n > 0 ? a.diagonal().cwiseAbs().maxCoeff() : 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= l_(j, k) * l_(j, k);
    if (!(d > 1e-14 * scale) || !std::isfinite(d)) {
      std::ostringstream msg;
      msg << "Cholesky: matrix is not positive definite (pivot " << j << " = " << d << ")";
      throw NumericalError(msg.str());
    }
    const double ljj = std::sqrt(d);
    l_(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double x = 0.5 * (a(i, j) + a(j, i));
      for (Eigen::Index k = 0; k < j; ++k) x -= l_(i, k) * l_(j, k);
      l_(i, j) = x / ljj;
    }
  }
}

Eigen::VectorXd Cholesky::solve(const Eigen::VectorXd& b) const {
  return solve(Eigen::MatrixXd(b)).col(0);
}

Eigen::MatrixXd Cholesky::solve(const Eigen::MatrixXd& b) const {
  if (b.rows() != l_.rows()) throw std::invalid_argument("Cholesky::solve: dimension mismatch");
  const Eigen::Index n = l_.rows();
  Eigen::MatrixXd x = b;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double s = x(i, c);
      for (Eigen::Index k = 0; k < i; ++k) s -= l_(i, k) * x(k, c);
      x(i, c) = s / l_(i, i);
    }
    for (Eigen::Index i = n - 1; i >= 0; --i) {
      double s = x(i, c);
      for (Eigen::Index k = i + 1; k < n; ++k) s -= l_(k, i) * x(k, c);
      x(i, c) = s / l_(i, i);
    }
  }
  return x;
}

Eigen::VectorXd solve_spd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  return Cholesky(a).solve(b);
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

namespace {
std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix(splitmix(master) ^ splitmix(index + 0x632be59bd9b4e019ULL));
}

double GaussianStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double GaussianStream::next() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double v1 = 0.0;
  double v2 = 0.0;
  double s = 0.0;
  do {
    v1 = 2.0 * uniform() - 1.0;
    v2 = 2.0 * uniform() - 1.0;
    s = v1 * v1 + v2 * v2;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v2 * f;
  has_spare_ = true;
  return v1 * f;
}

void GaussianStream::fill(Eigen::Ref<Eigen::VectorXd> out) {
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = next();
}

}  // namespace fdi
