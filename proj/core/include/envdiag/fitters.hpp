#pragma once

#include <vector>

#include "envdiag/model.hpp"

namespace envdiag {

struct FitControl {
  int max_iter = 100;
  /// Relative change in the objective at which iteration stops.
  double tol = 1e-9;
  /// Adaptive Gauss-Hermite nodes per group (GLMM).
  int quad_points = 51;
};

/// Least squares via QR. A response with zero residual variance yields
/// sigma = 0, degenerate = true and loglik = +inf.
FittedModel fit_lm(const Dataset& d);

/// Poisson log-linear model by iteratively reweighted least squares with
/// step halving. Throws NonConvergence or Separation.
FittedModel fit_glm_poisson(const Dataset& d, const FitControl& c = {});

/// Poisson log-linear model with a normal random intercept per group, fitted
/// by maximizing the adaptive Gauss-Hermite approximation of the marginal
/// likelihood over (beta, log omega).
FittedModel fit_glmm_poisson_ri(const Dataset& d, const FitControl& c = {});

/// Dispatches to the fitter for `kind`.
FittedModel fit_model(ModelKind kind, const Dataset& d, const FitControl& c = {});

/// Refits the model class of `m` to a new response on the same design.
FittedModel refit(const FittedModel& m, const Vector& y_new, const FitControl& c = {});

/// Draws a response from the fitted model. For the GLMM, fresh group
/// intercepts are drawn (unconditional simulation).
Vector simulate_response(const FittedModel& m, RandomStream& stream);

/// Log-likelihood of `y` at the parameters of `m` (marginal for the GLMM,
/// using the adaptive quadrature of the fit).
double log_likelihood(const FittedModel& m, const Vector& y);

/// Gauss-Hermite rule for the weight exp(-x^2), via Golub-Welsch.
struct GaussHermiteRule {
  Vector nodes;
  /// Weights for integrals against exp(-x^2).
  Vector weights;
  /// weights * exp(x^2), for integrating a plain function.
  Vector scaled_weights;
};
GaussHermiteRule gauss_hermite(int n_points);

namespace detail {

/// IRLS body of fit_glm_poisson; appends the deviance after every accepted
/// iteration to `deviance_trace` when given.
FittedModel irls_poisson(const Dataset& d, const FitControl& c, std::vector<double>* deviance_trace);

/// Poisson deviance 2 * sum(y log(y/mu) - (y - mu)).
double poisson_deviance(const Vector& y, const Vector& mu);

/// Per-group adaptive quadrature of the marginal Poisson random-intercept
/// log-likelihood. `offset` is X*beta for every observation.
struct GroupedPoisson {
  std::vector<std::vector<Eigen::Index>> members;
  Vector y;
  Vector log_factorial;  // log(y_i!)

  GroupedPoisson(const Vector& y, const std::vector<int>& group);

  /// Marginal log-likelihood; also returns per-group conditional modes.
  double marginal_loglik(const Vector& offset, double omega, const GaussHermiteRule& rule,
                         Vector* modes = nullptr) const;
};

}  // namespace detail

}  // namespace envdiag
