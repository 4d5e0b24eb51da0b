#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library's fitting code.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracles {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Poisson log-likelihood of a log-linear model.
inline double poisson_loglik(const Vec& y, const Mat& X, const Vec& beta) {
  const Vec eta = X * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) ll += y[i] * eta[i] - std::exp(eta[i]) - std::lgamma(y[i] + 1.0);
  return ll;
}

/// Plain Newton-Raphson on the Poisson log-likelihood, started at zero with
/// step halving, run until the step is at rounding level.
inline Vec newton_poisson(const Vec& y, const Mat& X) {
  Vec beta = Vec::Zero(X.cols());
  double ll = poisson_loglik(y, X, beta);
  for (int iter = 0; iter < 500; ++iter) {
    const Vec mu = (X * beta).array().exp();
    const Vec grad = X.transpose() * (y - mu);
    const Mat info = X.transpose() * mu.asDiagonal() * X;
    Vec step = info.ldlt().solve(grad);
    double t = 1.0;
    Vec next = beta + step;
    double ll_next = poisson_loglik(y, X, next);
    while (!(ll_next >= ll) && t > 1e-10) {
      t *= 0.5;
      next = beta + t * step;
      ll_next = poisson_loglik(y, X, next);
    }
    beta = next;
    ll = ll_next;
    if (step.cwiseAbs().maxCoeff() * t < 1e-14) break;
  }
  return beta;
}

/// log of the integral of exp(g(u)) by the trapezoid rule on `points`
/// equally spaced nodes over [lo, hi].
inline double log_trapezoid(const std::function<double(double)>& g, double lo, double hi, int points) {
  const double h = (hi - lo) / (points - 1);
  std::vector<double> vals(static_cast<std::size_t>(points));
  double top = -INFINITY;
  for (int k = 0; k < points; ++k) {
    vals[static_cast<std::size_t>(k)] = g(lo + h * k);
    top = std::max(top, vals[static_cast<std::size_t>(k)]);
  }
  double acc = 0.0;
  for (int k = 0; k < points; ++k) {
    const double w = (k == 0 || k == points - 1) ? 0.5 : 1.0;
    acc += w * std::exp(vals[static_cast<std::size_t>(k)] - top);
  }
  return top + std::log(acc * h);
}

/// Marginal log-likelihood of the intercept-only Poisson random-intercept
/// model by fixed (non-adaptive) trapezoid quadrature on the random
/// intercept, 201 nodes spanning +/- 12 omega.
inline double ri_marginal_loglik(const std::vector<std::vector<double>>& groups, double beta0, double omega,
                                 int points = 201) {
  double total = 0.0;
  for (const auto& ys : groups) {
    auto g = [&](double u) {
      double v = -0.5 * u * u / (omega * omega) - 0.5 * std::log(2.0 * M_PI * omega * omega);
      for (double y : ys) v += y * (beta0 + u) - std::exp(beta0 + u) - std::lgamma(y + 1.0);
      return v;
    };
    total += log_trapezoid(g, -12.0 * omega, 12.0 * omega, points);
  }
  return total;
}

/// Maximizes f over a box by repeatedly zooming a 41 x 41 grid on the best
/// cell. Returns (x, y).
inline std::pair<double, double> grid_search_2d(const std::function<double(double, double)>& f, double x_lo,
                                                double x_hi, double y_lo, double y_hi, int zooms = 8) {
  double bx = 0.5 * (x_lo + x_hi), by = 0.5 * (y_lo + y_hi);
  for (int z = 0; z < zooms; ++z) {
    double best = -INFINITY;
    const double dx = (x_hi - x_lo) / 40.0, dy = (y_hi - y_lo) / 40.0;
    for (int i = 0; i <= 40; ++i) {
      for (int j = 0; j <= 40; ++j) {
        const double x = x_lo + dx * i, y = y_lo + dy * j;
        const double v = f(x, y);
        if (v > best) {
          best = v;
          bx = x;
          by = y;
        }
      }
    }
    x_lo = bx - 2 * dx;
    x_hi = bx + 2 * dx;
    y_lo = by - 2 * dy;
    y_hi = by + 2 * dy;
  }
  return {bx, by};
}

/// Least-squares coefficients from the normal equations solved in closed
/// form for a straight line.
inline std::pair<double, double> ols_line(const Vec& x, const Vec& y) {
  const double mx = x.mean(), my = y.mean();
  const double sxy = ((x.array() - mx) * (y.array() - my)).sum();
  const double sxx = (x.array() - mx).square().sum();
  const double slope = sxy / sxx;
  return {my - slope * mx, slope};
}

}  // namespace oracles
