#include "envdiag/sim_harness.hpp"

#include <cmath>
#include <string>

#include "envdiag/parallel.hpp"

namespace envdiag {

std::string_view to_string(ScenarioModel model) {
  switch (model) {
    case ScenarioModel::A_Lm: return "a_lm";
    case ScenarioModel::B_Glm: return "b_glm";
    case ScenarioModel::C_Glmm: return "c_glmm";
  }
  return "unknown";
}

std::string_view to_string(Violation violation) {
  switch (violation) {
    case Violation::NullOk: return "null";
    case Violation::Mixture: return "mixture";
    case Violation::Quadratic: return "quadratic";
  }
  return "unknown";
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::QQ: return "qq";
    case Method::PP: return "pp";
    case Method::ResVsFits: return "res_vs_fits";
    case Method::ScaleLocation: return "scale_location";
    case Method::LoglikGof: return "loglik_gof";
  }
  return "unknown";
}

ScenarioModel parse_scenario_model(std::string_view name) {
  if (name == "a" || name == "a_lm" || name == "lm") return ScenarioModel::A_Lm;
  if (name == "b" || name == "b_glm" || name == "poisson") return ScenarioModel::B_Glm;
  if (name == "c" || name == "c_glmm" || name == "poisson-ri") return ScenarioModel::C_Glmm;
  throw Error(ErrorCode::InvalidArgument, "unknown scenario model '" + std::string(name) + "'");
}

Violation parse_violation(std::string_view name) {
  if (name == "null" || name == "null_ok") return Violation::NullOk;
  if (name == "mixture") return Violation::Mixture;
  if (name == "quadratic") return Violation::Quadratic;
  throw Error(ErrorCode::InvalidArgument, "unknown violation '" + std::string(name) + "'");
}

ModelKind model_kind(ScenarioModel model) {
  switch (model) {
    case ScenarioModel::A_Lm: return ModelKind::Lm;
    case ScenarioModel::B_Glm: return ModelKind::GlmPoisson;
    case ScenarioModel::C_Glmm: return ModelKind::GlmmPoissonRi;
  }
  return ModelKind::Lm;
}

void validate_scenario(const ScenarioSpec& s) {
  if (s.n_datasets < 1) throw Error(ErrorCode::InvalidArgument, "n_datasets must be at least 1");
  if (s.n < 4) throw Error(ErrorCode::InvalidArgument, "scenario sample size must be at least 4");
  if (s.model == ScenarioModel::C_Glmm && s.n < 10) {
    throw Error(ErrorCode::InvalidArgument, "random-intercept scenarios need n >= 10");
  }
  if (s.B < 19) throw Error(ErrorCode::InvalidArgument, "B must be at least 19");
  if (!(s.alpha > 0.0 && s.alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
}

TruthParameters truth_parameters(Violation violation) {
  if (violation == Violation::Quadratic) return {1.0, 4.0, -4.0, 0.25, 1.0};
  return {-2.0, 4.0, 0.0, 0.25, 1.0};
}

Vector scenario_covariate(const ScenarioSpec& s, RandomStream& stream) {
  Vector x(s.n);
  if (s.random_x) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < s.n; ++i) x[i] = u(stream);
  } else {
    for (int i = 0; i < s.n; ++i) x[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(s.n);
  }
  return x;
}

Dataset generate_dataset(const ScenarioSpec& s, RandomStream& stream) {
  constexpr int kGroups = 5;
  const TruthParameters truth = truth_parameters(s.violation);
  const Vector x = scenario_covariate(s, stream);
  const Vector eta = (truth.beta0 + truth.beta1 * x.array() + truth.beta2 * x.array().square()).matrix();

  Dataset d;
  d.X.resize(s.n, 2);
  d.X.col(0).setOnes();
  d.X.col(1) = x;
  d.y.resize(s.n);

  std::normal_distribution<double> z(0.0, 1.0);
  std::bernoulli_distribution inflated(0.1);
  const bool mixture = s.violation == Violation::Mixture;

  switch (s.model) {
    case ScenarioModel::A_Lm:
      for (int i = 0; i < s.n; ++i) {
        const double sd = (mixture && inflated(stream)) ? 4.0 * truth.sigma : truth.sigma;
        d.y[i] = eta[i] + sd * z(stream);
      }
      break;
    case ScenarioModel::B_Glm:
    case ScenarioModel::C_Glmm: {
      Vector shift = Vector::Zero(s.n);
      if (s.model == ScenarioModel::C_Glmm) {
        std::vector<int> group(static_cast<std::size_t>(s.n));
        Vector intercepts(kGroups);
        for (int j = 0; j < kGroups; ++j) intercepts[j] = truth.omega * z(stream);
        for (int i = 0; i < s.n; ++i) {
          group[static_cast<std::size_t>(i)] = i % kGroups;
          shift[i] = intercepts[i % kGroups];
        }
        d.group = std::move(group);
      }
      for (int i = 0; i < s.n; ++i) {
        double mean = std::exp(eta[i] + shift[i]);
        if (mixture && inflated(stream)) mean *= 4.0;
        std::poisson_distribution<long long> draw(mean);
        d.y[i] = static_cast<double>(draw(stream));
      }
      break;
    }
  }
  return d;
}

DatasetOutcome evaluate_dataset(const ScenarioSpec& s, int dataset_index) {
  const auto index = static_cast<std::uint64_t>(dataset_index);
  RandomStream data_stream = make_stream(s.seed, {index, 0});
  DatasetOutcome outcome;
  try {
    const Dataset d = validate_dataset(generate_dataset(s, data_stream));
    DiagnosticOptions options;
    options.B = s.B;
    options.alpha = s.alpha;
    options.m_grid = s.m_grid;
    // Separate stream family for the bootstrap of this dataset.
    options.seed = make_stream(s.seed, {index, 1})();
    options.threads = 1;
    const FittedModel m = fit_model(model_kind(s.model), d, options.fit);
    const ModelCapability cap = standard_capability(m.kind, {}, options.fit);
    const BootstrapSample sample = run_bootstrap(m, cap, options);
    const PlotKind kinds[] = {PlotKind::QQ, PlotKind::PP, PlotKind::ResVsFits, PlotKind::ScaleLocation};
    for (std::size_t k = 0; k < 4; ++k) outcome.reject[k] = diagnose_sample(kinds[k], sample, options).reject;
    outcome.reject[4] = loglik_gof_from_sample(sample, s.alpha).reject;
    outcome.ok = true;
  } catch (const Error&) {
    outcome.ok = false;
  }
  return outcome;
}

ScenarioResult run_scenario(const ScenarioSpec& s, std::size_t threads) {
  validate_scenario(s);
  std::vector<DatasetOutcome> outcomes(static_cast<std::size_t>(s.n_datasets));
  parallel_for(outcomes.size(), threads,
               [&](std::size_t i) { outcomes[i] = evaluate_dataset(s, static_cast<int>(i)); });

  ScenarioResult result;
  result.spec = s;
  for (std::size_t k = 0; k < kAllMethods.size(); ++k) result.methods[k].method = kAllMethods[k];
  for (const auto& o : outcomes) {
    if (!o.ok) {
      ++result.failed_datasets;
      continue;
    }
    for (std::size_t k = 0; k < kAllMethods.size(); ++k) {
      ++result.methods[k].evaluated;
      result.methods[k].rejections += o.reject[k] ? 1 : 0;
    }
  }
  for (auto& mr : result.methods) {
    if (mr.evaluated == 0) continue;
    mr.rate = static_cast<double>(mr.rejections) / mr.evaluated;
    mr.se = std::sqrt(mr.rate * (1.0 - mr.rate) / mr.evaluated);
  }
  return result;
}

}  // namespace envdiag
