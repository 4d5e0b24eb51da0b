#pragma once

#include "envdiag/model.hpp"

namespace envdiag {

enum class ResidualKind { Standardized, Deviance, Pearson };

/// Hat-matrix diagonals of X from a thin QR factorization.
Vector hat_diagonals(const Matrix& X);

/// (y - eta) / (sigma * sqrt(1 - h_ii)) for a linear model. A degenerate fit
/// (sigma = 0) gives all zeros. Throws LeverageOne.
Vector standardized_residuals(const FittedModel& m);

/// Signed square roots of the Poisson deviance contributions against the
/// marginal mean exp(X * beta).
Vector deviance_residuals(const FittedModel& m);

/// (y - mu) / sqrt(mu) against the marginal mean.
Vector pearson_residuals(const FittedModel& m);

/// Elementwise helpers shared with the CLI and tests.
double deviance_residual(double y, double mu);
double pearson_residual(double y, double mu);

Vector residuals(const FittedModel& m, ResidualKind kind);

/// Standardized for the linear model, deviance for the Poisson models.
ResidualKind default_residual_kind(ModelKind kind);

}  // namespace envdiag
