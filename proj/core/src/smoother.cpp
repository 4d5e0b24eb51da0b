#include "envdiag/smoother.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace envdiag {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::vector<double> distinct_sorted(const Vector& x) {
  std::vector<double> v(x.data(), x.data() + x.size());
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

// Type-7 sample quantile of sorted values.
double quantile(const std::vector<double>& sorted, double prob) {
  const double pos = prob * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

// ---------------------------------------------------------------------------
// BSplineBasis

BSplineBasis::BSplineBasis(Vector interior_knots) {
  const auto m = interior_knots.size();
  knots_.resize(m + 8);
  knots_.head(4).setZero();
  knots_.segment(4, m) = interior_knots;
  knots_.tail(4).setOnes();
}

Vector BSplineBasis::greville() const {
  const int k = dim();
  Vector g(k);
  for (int j = 0; j < k; ++j) g[j] = (knots_[j + 1] + knots_[j + 2] + knots_[j + 3]) / 3.0;
  return g;
}

Vector BSplineBasis::row(double u) const {
  const int k = dim();
  Vector out = Vector::Zero(k);
  if (k <= 0) return out;
  u = std::clamp(u, 0.0, 1.0);
  // Knot span: t[span] <= u < t[span + 1], with the right end closed.
  int span = k - 1;
  for (int j = 3; j < k; ++j) {
    if (u < knots_[j + 1]) {
      span = j;
      break;
    }
  }
  double left[4], right[4], basis[4];
  basis[0] = 1.0;
  for (int j = 1; j <= 3; ++j) {
    left[j] = u - knots_[span + 1 - j];
    right[j] = knots_[span + j] - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom > 0.0 ? basis[r] / denom : 0.0;
      basis[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    basis[j] = saved;
  }
  for (int j = 0; j <= 3; ++j) out[span - 3 + j] = basis[j];
  return out;
}

Matrix BSplineBasis::design(const Vector& u) const {
  Matrix B(u.size(), dim());
  for (Eigen::Index i = 0; i < u.size(); ++i) B.row(i) = row(u[i]).transpose();
  return B;
}

// ---------------------------------------------------------------------------
// SmoothFit

double SmoothFit::eval(double x) const {
  if (linear_fallback) return line_intercept + line_slope * x;
  Vector interior(knots.size());
  const double width = x_hi - x_lo;
  for (Eigen::Index j = 0; j < knots.size(); ++j) interior[j] = (knots[j] - x_lo) / width;
  const BSplineBasis basis(interior);
  return basis.row((x - x_lo) / width).dot(coefs);
}

Vector SmoothFit::eval(const Vector& x) const {
  Vector out(x.size());
  if (linear_fallback) {
    for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = line_intercept + line_slope * x[i];
    return out;
  }
  Vector interior(knots.size());
  const double width = x_hi - x_lo;
  for (Eigen::Index j = 0; j < knots.size(); ++j) interior[j] = (knots[j] - x_lo) / width;
  const BSplineBasis basis(interior);
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = basis.row((x[i] - x_lo) / width).dot(coefs);
  return out;
}

// ---------------------------------------------------------------------------
// PenalizedSpline

PenalizedSpline::PenalizedSpline(const Vector& x) : x_(x) {
  const auto n = x.size();
  if (n < 4) throw Error(ErrorCode::InvalidArgument, "smoother needs at least 4 observations");
  if (!x.allFinite()) throw Error(ErrorCode::InvalidArgument, "smoother covariate has non-finite values");
  const auto distinct = distinct_sorted(x);
  if (distinct.size() < 2) throw Error(ErrorCode::DegenerateX, "all covariate values are equal");
  lo_ = distinct.front();
  hi_ = distinct.back();
  if (distinct.size() < 4) {
    fallback_ = true;
    return;
  }

  const int n_distinct = static_cast<int>(distinct.size());
  basis_dim_ = std::max(4, std::min({10, static_cast<int>(n) - 2, n_distinct}));
  const int n_interior = basis_dim_ - 4;

  // Knots at quantiles of the distinct values, mapped to [0, 1]. Working on
  // the unit interval makes the fit invariant to affine changes of x.
  const double width = hi_ - lo_;
  std::vector<double> unit(distinct.size());
  for (std::size_t i = 0; i < distinct.size(); ++i) unit[i] = (distinct[i] - lo_) / width;
  Vector interior(n_interior);
  for (int j = 0; j < n_interior; ++j) {
    interior[j] = quantile(unit, static_cast<double>(j + 1) / static_cast<double>(n_interior + 1));
  }
  basis_ = BSplineBasis(interior);
  const int k = basis_dim_;

  // Second divided differences of the coefficients over the Greville points,
  // scaled by the mean spacing so uniform knots give ordinary differences.
  const Vector t = basis_.greville();
  const double spacing = 1.0 / static_cast<double>(k - 1);
  Matrix L = Matrix::Zero(k - 2, k);
  for (int j = 0; j < k - 2; ++j) {
    const double h1 = t[j + 1] - t[j];
    const double h2 = t[j + 2] - t[j + 1];
    L(j, j) = spacing / h1;
    L(j, j + 1) = -spacing / h1 - spacing / h2;
    L(j, j + 2) = spacing / h2;
  }
  const Matrix S = L.transpose() * L;

  // Null space of the penalty is spanned by the constant and Greville
  // vectors; split coefficient space into it and its complement.
  Matrix null_raw(k, 2);
  null_raw.col(0).setOnes();
  null_raw.col(1) = t;
  Eigen::HouseholderQR<Matrix> qr(null_raw);
  const Matrix Q = qr.householderQ();
  const Matrix null_basis = Q.leftCols(2);
  const Matrix range_raw = Q.rightCols(k - 2);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(range_raw.transpose() * S * range_raw);
  penalty_eigen_ = eig.eigenvalues();
  to_coefs_.resize(k, k);
  to_coefs_.leftCols(2) = null_basis;
  to_coefs_.rightCols(k - 2) = range_raw * eig.eigenvectors();

  Vector u(n);
  for (Eigen::Index i = 0; i < n; ++i) u[i] = (x[i] - lo_) / width;
  design_ = basis_.design(u) * to_coefs_;
  gram_ = design_.transpose() * design_;
}

PenalizedSpline::Solution PenalizedSpline::solve(const Vector& y, double lambda) const {
  const int k = basis_dim_;
  Matrix M = gram_;
  for (int j = 2; j < k; ++j) M(j, j) += lambda * penalty_eigen_[j - 2];
  Eigen::LDLT<Matrix> ldlt(M);
  Solution s;
  s.a = ldlt.solve(design_.transpose() * y);
  double penalty = 0.0;
  for (int j = 2; j < k; ++j) penalty += lambda * penalty_eigen_[j - 2] * s.a[j] * s.a[j];
  s.penalized_rss = (y - design_ * s.a).squaredNorm() + penalty;
  return s;
}

double PenalizedSpline::profile_loglik(const Vector& y, double log10_lambda) const {
  if (fallback_) return std::numeric_limits<double>::quiet_NaN();
  const int k = basis_dim_;
  const double lambda = std::pow(10.0, log10_lambda);
  const Solution s = solve(y, lambda);
  const double n = static_cast<double>(y.size());
  // Zero residual (e.g. exactly linear data) would send the criterion to
  // +inf for every lambda; a tiny floor keeps it finite.
  const double floor = 1e-300 + 1e-28 * std::max(y.squaredNorm(), 1.0);
  const double prss = std::max(s.penalized_rss, floor);

  // log|V| = log|Z'Z + lambda*Lambda| - log|lambda*Lambda| for the marginal
  // covariance V = I + Z (lambda*Lambda)^{-1} Z'.
  Matrix R = gram_.bottomRightCorner(k - 2, k - 2);
  double log_det_penalty = 0.0;
  for (int j = 0; j < k - 2; ++j) {
    R(j, j) += lambda * penalty_eigen_[j];
    log_det_penalty += std::log(lambda * penalty_eigen_[j]);
  }
  Eigen::LLT<Matrix> llt(R);
  double log_det = 0.0;
  for (int j = 0; j < k - 2; ++j) log_det += 2.0 * std::log(llt.matrixL()(j, j));
  return -0.5 * n * (kLog2Pi + std::log(prss / n) + 1.0) - 0.5 * (log_det - log_det_penalty);
}

PenalizedSpline::Search PenalizedSpline::search(const Vector& y) const {
  // Coarse scan brackets the maximum, golden section refines it.
  constexpr int kScan = 33;
  const double step = (kLog10LambdaMax - kLog10LambdaMin) / (kScan - 1);
  int best = 0;
  double best_ll = -std::numeric_limits<double>::infinity();
  std::vector<double> scan(kScan);
  for (int i = 0; i < kScan; ++i) {
    scan[i] = profile_loglik(y, kLog10LambdaMin + step * i);
    if (scan[i] > best_ll) {
      best_ll = scan[i];
      best = i;
    }
  }
  double a = kLog10LambdaMin + step * std::max(best - 1, 0);
  double b = kLog10LambdaMin + step * std::min(best + 1, kScan - 1);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = profile_loglik(y, c);
  double fd = profile_loglik(y, d);
  while (b - a > 1e-4) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = profile_loglik(y, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = profile_loglik(y, d);
    }
  }
  Search result{0.5 * (a + b), 0.0, best > 0 && best < kScan - 1};
  result.loglik = profile_loglik(y, result.log10_lambda);
  // The scan point itself may beat the refined interior point at an edge.
  if (best_ll > result.loglik) {
    result.log10_lambda = kLog10LambdaMin + step * best;
    result.loglik = best_ll;
  }
  return result;
}

SmoothFit PenalizedSpline::make_fit(const Solution& s, double lambda) const {
  SmoothFit fit;
  fit.basis_dim = basis_dim_;
  fit.coefs = to_coefs_ * s.a;
  fit.lambda = lambda;
  const Vector& full = basis_.knots();
  fit.knots.resize(basis_dim_ - 4);
  for (int j = 0; j < basis_dim_ - 4; ++j) fit.knots[j] = lo_ + (hi_ - lo_) * full[4 + j];
  fit.x_lo = lo_;
  fit.x_hi = hi_;
  return fit;
}

SmoothFit PenalizedSpline::fit_line(const Vector& y) const {
  Matrix X(x_.size(), 2);
  X.col(0).setOnes();
  X.col(1) = x_;
  const Vector beta = X.colPivHouseholderQr().solve(y);
  SmoothFit fit;
  fit.linear_fallback = true;
  fit.line_intercept = beta[0];
  fit.line_slope = beta[1];
  fit.x_lo = lo_;
  fit.x_hi = hi_;
  return fit;
}

SmoothFit PenalizedSpline::fit_at(const Vector& y, double lambda) const {
  if (y.size() != x_.size()) throw Error(ErrorCode::InvalidArgument, "smoother response has wrong length");
  if (fallback_) return fit_line(y);
  SmoothFit fit = make_fit(solve(y, lambda), lambda);
  fit.profile_loglik = profile_loglik(y, std::log10(lambda));
  return fit;
}

SmoothFit PenalizedSpline::fit(const Vector& y) const {
  if (y.size() != x_.size()) throw Error(ErrorCode::InvalidArgument, "smoother response has wrong length");
  if (!y.allFinite()) throw Error(ErrorCode::InvalidArgument, "smoother response has non-finite values");
  if (fallback_) return fit_line(y);
  const Search best = search(y);
  const double lambda = std::pow(10.0, best.log10_lambda);
  SmoothFit fit = make_fit(solve(y, lambda), lambda);
  fit.profile_loglik = best.loglik;
  fit.lambda_at_boundary = best.log10_lambda - kLog10LambdaMin < 1e-3 || kLog10LambdaMax - best.log10_lambda < 1e-3;
  return fit;
}

SmoothFit fit_smoother(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw Error(ErrorCode::InvalidArgument, "x and y lengths differ");
  return PenalizedSpline(x).fit(y);
}

Vector equispaced_grid(double lo, double hi, int m) {
  if (m < 1) throw Error(ErrorCode::InvalidArgument, "grid needs at least one point");
  Vector grid(m);
  if (m == 1) {
    grid[0] = 0.5 * (lo + hi);
    return grid;
  }
  for (int i = 0; i < m; ++i) grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(m - 1);
  grid[m - 1] = hi;
  return grid;
}

Vector evaluate_on_grid(const SmoothFit& s, double lo, double hi, int m) {
  if (!(lo < hi)) throw Error(ErrorCode::InvalidArgument, "grid needs lo < hi");
  const double slack = 1e-12 * std::max(1.0, s.x_hi - s.x_lo);
  if (lo < s.x_lo - slack || hi > s.x_hi + slack) {
    throw Error(ErrorCode::OutOfRange, "grid [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                           "] extends beyond the fitted range");
  }
  return s.eval(equispaced_grid(lo, hi, m));
}

}  // namespace envdiag
