#include "envdiag/residuals.hpp"

#include <cmath>
#include <string>

namespace envdiag {

Vector hat_diagonals(const Matrix& X) {
  Eigen::HouseholderQR<Matrix> qr(X);
  const Matrix Q = qr.householderQ() * Matrix::Identity(X.rows(), X.cols());
  return Q.rowwise().squaredNorm();
}

Vector standardized_residuals(const FittedModel& m) {
  if (m.kind != ModelKind::Lm) {
    throw Error(ErrorCode::InvalidArgument, "standardized residuals are defined for linear models only");
  }
  const auto& d = m.dataset();
  const Vector raw = d.y - linear_predictors(m);
  if (m.degenerate || m.sigma == 0.0) return Vector::Zero(raw.size());
  const Vector h = hat_diagonals(d.X);
  Vector e(raw.size());
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    if (h[i] >= 1.0 - 1e-12) {
      throw Error(ErrorCode::LeverageOne, "observation " + std::to_string(i) + " has leverage one");
    }
    e[i] = raw[i] / (m.sigma * std::sqrt(1.0 - h[i]));
  }
  return e;
}

double deviance_residual(double y, double mu) {
  const double ylogy = y > 0.0 ? y * std::log(y / mu) : 0.0;
  const double contribution = std::max(2.0 * (ylogy - (y - mu)), 0.0);
  const double magnitude = std::sqrt(contribution);
  if (y > mu) return magnitude;
  if (y < mu) return -magnitude;
  return 0.0;
}

double pearson_residual(double y, double mu) { return (y - mu) / std::sqrt(mu); }

namespace {

void require_poisson(const FittedModel& m) {
  if (m.kind == ModelKind::Lm) {
    throw Error(ErrorCode::InvalidArgument, "deviance and Pearson residuals need a Poisson model");
  }
}

}  // namespace

Vector deviance_residuals(const FittedModel& m) {
  require_poisson(m);
  const Vector eta = linear_predictors(m);
  const auto& y = m.dataset().y;
  Vector e(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) e[i] = deviance_residual(y[i], std::exp(eta[i]));
  return e;
}

Vector pearson_residuals(const FittedModel& m) {
  require_poisson(m);
  const Vector eta = linear_predictors(m);
  const auto& y = m.dataset().y;
  Vector e(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) e[i] = pearson_residual(y[i], std::exp(eta[i]));
  return e;
}

Vector residuals(const FittedModel& m, ResidualKind kind) {
  switch (kind) {
    case ResidualKind::Standardized: return standardized_residuals(m);
    case ResidualKind::Deviance: return deviance_residuals(m);
    case ResidualKind::Pearson: return pearson_residuals(m);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown residual kind");
}

ResidualKind default_residual_kind(ModelKind kind) {
  return kind == ModelKind::Lm ? ResidualKind::Standardized : ResidualKind::Deviance;
}

}  // namespace envdiag
