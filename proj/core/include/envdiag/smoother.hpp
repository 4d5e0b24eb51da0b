#pragma once

#include "envdiag/model.hpp"

namespace envdiag {

/// A fitted penalized cubic regression spline. Immutable once built.
struct SmoothFit {
  int basis_dim = 0;
  /// B-spline coefficients on the internal unit-interval parameterization.
  Vector coefs;
  double lambda = 0.0;
  /// Interior knots on the original x scale.
  Vector knots;
  double x_lo = 0.0;
  double x_hi = 0.0;
  double profile_loglik = 0.0;

  /// The maximizing lambda sits at an end of the search interval.
  bool lambda_at_boundary = false;
  /// Fewer than four distinct x values; the fit is a least-squares line.
  bool linear_fallback = false;
  double line_intercept = 0.0;
  double line_slope = 0.0;

  double eval(double x) const;
  Vector eval(const Vector& x) const;
};

/// Cubic B-spline basis on [0, 1] with clamped boundary knots.
class BSplineBasis {
 public:
  explicit BSplineBasis(Vector interior_knots);

  int dim() const { return static_cast<int>(knots_.size()) - 4; }
  const Vector& knots() const { return knots_; }
  /// Knot averages; the coefficients that reproduce f(u) = u.
  Vector greville() const;
  /// Basis row at u in [0, 1].
  Vector row(double u) const;
  Matrix design(const Vector& u) const;

 private:
  Vector knots_;  // full clamped knot vector
};

/// Smoother prepared for a fixed covariate vector. Preparing once and fitting
/// many responses is how the bootstrap reuses the observed linear predictors.
///
/// Coefficients are penalized by squared second divided differences taken at
/// the Greville abscissae, so constants and straight lines are unpenalized
/// even with unequally spaced quantile knots. The smoothing parameter
/// maximizes the profile likelihood of the mixed-model form in which the
/// penalized coefficient directions are Gaussian random effects with
/// variance sigma^2 / (lambda * eigenvalue).
class PenalizedSpline {
 public:
  static constexpr double kLog10LambdaMin = -8.0;
  static constexpr double kLog10LambdaMax = 8.0;

  explicit PenalizedSpline(const Vector& x);

  /// Fit with lambda chosen by maximum likelihood.
  SmoothFit fit(const Vector& y) const;
  /// Fit at a fixed lambda.
  SmoothFit fit_at(const Vector& y, double lambda) const;
  /// Profile log-likelihood at log10(lambda).
  double profile_loglik(const Vector& y, double log10_lambda) const;

  int basis_dim() const { return basis_dim_; }
  bool linear_fallback() const { return fallback_; }
  /// Result of the lambda search; `interior` is false when the coarse scan
  /// peaked at an end of the interval.
  struct Search {
    double log10_lambda;
    double loglik;
    bool interior;
  };
  Search search(const Vector& y) const;

 private:
  struct Solution {
    Vector a;  // coefficients in the (null, range) parameterization
    double penalized_rss;
  };
  Solution solve(const Vector& y, double lambda) const;
  SmoothFit make_fit(const Solution& s, double lambda) const;
  SmoothFit fit_line(const Vector& y) const;

  Vector x_;
  double lo_ = 0.0;
  double hi_ = 1.0;
  bool fallback_ = false;
  int basis_dim_ = 0;
  BSplineBasis basis_{Vector()};
  Matrix to_coefs_;  // maps (null, range) coefficients to B-spline coefficients
  Matrix design_;    // [X0 Z]
  Matrix gram_;
  Vector penalty_eigen_;  // positive eigenvalues of the penalty (range part)
};

/// fit_smoother(x, y): basis dimension min(10, n - 2) (at least 4), knots at
/// quantiles of the distinct x values, lambda on [1e-8, 1e8] by ML.
SmoothFit fit_smoother(const Vector& x, const Vector& y);

/// The fit at m equispaced points spanning [lo, hi]; m = 1 gives the
/// midpoint. Throws OutOfRange when [lo, hi] leaves the fitted range.
Vector evaluate_on_grid(const SmoothFit& s, double lo, double hi, int m);

/// m equispaced points spanning [lo, hi] (the midpoint when m = 1).
Vector equispaced_grid(double lo, double hi, int m);

}  // namespace envdiag
