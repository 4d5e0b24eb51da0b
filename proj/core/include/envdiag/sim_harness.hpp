#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "envdiag/diagnostics.hpp"

namespace envdiag {

enum class ScenarioModel { A_Lm, B_Glm, C_Glmm };
enum class Violation { NullOk, Mixture, Quadratic };
enum class Method { QQ, PP, ResVsFits, ScaleLocation, LoglikGof };

inline constexpr std::array<Method, 5> kAllMethods = {Method::QQ, Method::PP, Method::ResVsFits,
                                                      Method::ScaleLocation, Method::LoglikGof};

std::string_view to_string(ScenarioModel model);
std::string_view to_string(Violation violation);
std::string_view to_string(Method method);
ScenarioModel parse_scenario_model(std::string_view name);
Violation parse_violation(std::string_view name);
ModelKind model_kind(ScenarioModel model);

/// One cell of the simulation design.
struct ScenarioSpec {
  ScenarioModel model = ScenarioModel::A_Lm;
  Violation violation = Violation::NullOk;
  int n = 40;
  int n_datasets = 200;
  int B = 99;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  /// Covariates drawn uniformly on (0, 1) instead of (i - 0.5) / n.
  bool random_x = false;
  int m_grid = 64;
};

void validate_scenario(const ScenarioSpec& s);

/// Generating parameters of the linear predictor b0 + 4x + b2 x^2.
struct TruthParameters {
  double beta0;
  double beta1;
  double beta2;
  double sigma;
  double omega;
};
TruthParameters truth_parameters(Violation violation);

/// Covariate values for the scenario (equispaced unless random_x).
Vector scenario_covariate(const ScenarioSpec& s, RandomStream& stream);

/// Simulates one dataset; the fitted design is always [1, x], grouping is
/// i mod 5 for the random-intercept model.
Dataset generate_dataset(const ScenarioSpec& s, RandomStream& stream);

struct MethodRate {
  Method method;
  int rejections = 0;
  int evaluated = 0;
  double rate = 0.0;
  double se = 0.0;
};

/// One row of the power table: rejection rates for every method.
struct ScenarioResult {
  ScenarioSpec spec;
  std::array<MethodRate, 5> methods;
  /// Datasets whose observed fit or bootstrap failed; excluded from rates.
  int failed_datasets = 0;

  const MethodRate& rate(Method m) const { return methods[static_cast<std::size_t>(m)]; }
};

/// Rejections of every method on one dataset, all sharing one bootstrap.
struct DatasetOutcome {
  bool ok = false;
  std::array<bool, 5> reject{};
};
DatasetOutcome evaluate_dataset(const ScenarioSpec& s, int dataset_index);

/// Runs n_datasets datasets (in parallel up to `threads`, 0 = ENVDIAG_THREADS);
/// deterministic in the seed.
ScenarioResult run_scenario(const ScenarioSpec& s, std::size_t threads = 0);

}  // namespace envdiag
