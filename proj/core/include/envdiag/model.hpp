#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "envdiag/errors.hpp"

namespace envdiag {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Response, design and optional random-intercept grouping for one fit.
/// The first design column is the intercept.
struct Dataset {
  Vector y;
  Matrix X;
  std::optional<std::vector<int>> group;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index p() const { return X.cols(); }
  /// Number of distinct group labels (0 when ungrouped).
  int n_groups() const;
};

/// Checks shape, rank and grouping invariants and returns the dataset
/// unchanged. Throws TooFewRows, RankDeficient or BadGrouping.
Dataset validate_dataset(Dataset d);

/// Numerical rank of X using a column-pivoted QR with a relative threshold.
Eigen::Index design_rank(const Matrix& X);

enum class ModelKind { Lm, GlmPoisson, GlmmPoissonRi };

std::string_view to_string(ModelKind kind);

struct FittedModel {
  ModelKind kind = ModelKind::Lm;
  Vector beta;
  /// Residual sd on the RSS/(n-p) scale, used for simulation (LM only).
  double sigma = 0.0;
  /// Residual sd at the maximum-likelihood scale RSS/n (LM only); the scale at
  /// which the Gaussian log-likelihood is evaluated.
  double sigma_ml = 0.0;
  /// Random-intercept sd (GLMM only).
  double omega = 0.0;
  /// Marginal linear predictor X * beta.
  Vector eta;
  double loglik = 0.0;
  /// Conditional modes of the group intercepts (GLMM only). Never enters eta.
  Vector ranef;
  std::shared_ptr<const Dataset> data;

  /// LM with zero residual variance.
  bool degenerate = false;
  /// GLMM whose omega estimate sits on the lower floor.
  bool boundary_omega = false;
  int iterations = 0;
  /// Quadrature nodes used for the marginal likelihood (GLMM only).
  int quad_points = 51;

  const Dataset& dataset() const { return *data; }
};

/// X * beta. For the random-intercept model the predicted intercepts are
/// excluded, giving the marginal linear predictor.
Vector linear_predictors(const FittedModel& m);

/// Random stream handed to simulators. Streams are derived from a seed and an
/// index path so that replicate b always sees the same draws regardless of
/// execution order.
using RandomStream = std::mt19937_64;

RandomStream make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {});

/// The operations the bootstrap engine needs from a model class. Any model
/// can be plugged into the diagnostics by filling these in.
struct ModelCapability {
  std::function<Vector(const FittedModel&, RandomStream&)> simulate;
  std::function<FittedModel(const FittedModel&, const Vector&)> refit;
  std::function<Vector(const FittedModel&)> residuals;
  std::function<Vector(const FittedModel&)> predict;
};

}  // namespace envdiag
