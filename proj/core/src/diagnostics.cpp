#include "envdiag/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <boost/math/distributions/normal.hpp>

#include "envdiag/parallel.hpp"
#include "envdiag/smoother.hpp"

namespace envdiag {

std::string_view to_string(PlotKind kind) {
  switch (kind) {
    case PlotKind::QQ: return "qq";
    case PlotKind::PP: return "pp";
    case PlotKind::ResVsFits: return "res_vs_fits";
    case PlotKind::ScaleLocation: return "scale_location";
  }
  return "unknown";
}

PlotKind parse_plot_kind(std::string_view name) {
  if (name == "qq") return PlotKind::QQ;
  if (name == "pp") return PlotKind::PP;
  if (name == "res_vs_fits" || name == "resfit" || name == "res-vs-fits") return PlotKind::ResVsFits;
  if (name == "scale_location" || name == "scale-location") return PlotKind::ScaleLocation;
  throw Error(ErrorCode::InvalidArgument, "unknown plot kind '" + std::string(name) + "'");
}

double normal_cdf(double x) { return boost::math::cdf(boost::math::normal_distribution<double>(), x); }

double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

namespace {

Vector plotting_positions(Eigen::Index n) {
  Vector p(n);
  for (Eigen::Index i = 0; i < n; ++i) p[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  return p;
}

Vector sorted(Vector e) {
  std::sort(e.data(), e.data() + e.size());
  return e;
}

void require_rows(const Vector& e) {
  if (e.size() < 3) throw Error(ErrorCode::TooFewRows, "diagnostic functional needs at least 3 residuals");
}

}  // namespace

Functional qq_function(const Vector& e) {
  require_rows(e);
  Functional f;
  f.grid = plotting_positions(e.size()).unaryExpr([](double p) { return normal_quantile(p); });
  f.values = sorted(e);
  return f;
}

Functional pp_function(const Vector& e) {
  require_rows(e);
  Functional f;
  f.grid = plotting_positions(e.size());
  f.values = sorted(e).unaryExpr([](double v) { return normal_cdf(v); });
  return f;
}

Functional resfit_function(const Vector& eta, const Vector& e, int m_grid) {
  Functional f;
  f.grid = equispaced_grid(eta.minCoeff(), eta.maxCoeff(), m_grid);
  f.values = fit_smoother(eta, e).eval(f.grid);
  return f;
}

Functional scalelocation_function(const Vector& eta, const Vector& e, int m_grid) {
  return resfit_function(eta, e.cwiseAbs(), m_grid);
}

ModelCapability standard_capability(ModelKind kind, std::optional<ResidualKind> residual_kind, FitControl fit) {
  const ResidualKind rk = residual_kind.value_or(default_residual_kind(kind));
  ModelCapability cap;
  cap.simulate = [](const FittedModel& m, RandomStream& s) { return simulate_response(m, s); };
  cap.refit = [fit](const FittedModel& m, const Vector& y) { return refit(m, y, fit); };
  cap.residuals = [rk](const FittedModel& m) { return residuals(m, rk); };
  cap.predict = [](const FittedModel& m) { return linear_predictors(m); };
  return cap;
}

BootstrapSample run_bootstrap(const FittedModel& m, const ModelCapability& cap, const DiagnosticOptions& options) {
  if (options.B < 19) throw Error(ErrorCode::InvalidArgument, "B must be at least 19");
  const auto replicates = static_cast<std::size_t>(options.B - 1);
  const int budget = static_cast<int>(std::floor(options.max_failure_fraction * options.B + 1e-9));

  BootstrapSample sample;
  sample.eta = cap.predict(m);
  sample.observed_residuals = cap.residuals(m);
  sample.observed_loglik = m.loglik;
  sample.residuals.resize(replicates);
  sample.logliks.resize(static_cast<Eigen::Index>(replicates));
  std::vector<int> failures(replicates, 0);

  parallel_for(replicates, options.threads, [&](std::size_t r) {
    const auto b = static_cast<std::uint64_t>(r + 1);
    for (int attempt = 0;; ++attempt) {
      RandomStream stream = make_stream(options.seed, {b, static_cast<std::uint64_t>(attempt)});
      try {
        const Vector y = cap.simulate(m, stream);
        const FittedModel fit = cap.refit(m, y);
        Vector e = cap.residuals(fit);
        if (!e.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite replicate residuals");
        sample.residuals[r] = std::move(e);
        sample.logliks[static_cast<Eigen::Index>(r)] = fit.loglik;
        return;
      } catch (const Error&) {
        // A replicate that alone exhausts the budget cannot succeed overall.
        if (++failures[r] > budget) return;
      }
    }
  });

  for (int f : failures) sample.failures += f;
  if (sample.failures > budget) {
    throw Error(ErrorCode::TooManyRefitFailures, std::to_string(sample.failures) + " failed refits exceed " +
                                                     std::to_string(budget) + " allowed for B = " +
                                                     std::to_string(options.B));
  }
  return sample;
}

FunctionEnsemble build_ensemble(PlotKind kind, const BootstrapSample& sample, int m_grid) {
  const auto rows = static_cast<Eigen::Index>(sample.residuals.size()) + 1;
  auto residual_row = [&](Eigen::Index b) -> const Vector& {
    return b == 0 ? sample.observed_residuals : sample.residuals[static_cast<std::size_t>(b - 1)];
  };

  FunctionEnsemble e;
  switch (kind) {
    case PlotKind::QQ:
    case PlotKind::PP: {
      const auto fn = kind == PlotKind::QQ ? qq_function : pp_function;
      const Functional first = fn(residual_row(0));
      e.grid = first.grid;
      e.values.resize(rows, first.values.size());
      e.values.row(0) = first.values.transpose();
      for (Eigen::Index b = 1; b < rows; ++b) e.values.row(b) = fn(residual_row(b)).values.transpose();
      break;
    }
    case PlotKind::ResVsFits:
    case PlotKind::ScaleLocation: {
      // Linear predictors stay at their observed values for every replicate,
      // so the basis is prepared once.
      const PenalizedSpline spline(sample.eta);
      e.grid = equispaced_grid(sample.eta.minCoeff(), sample.eta.maxCoeff(), m_grid);
      e.values.resize(rows, m_grid);
      const bool absolute = kind == PlotKind::ScaleLocation;
      for (Eigen::Index b = 0; b < rows; ++b) {
        const Vector& r = residual_row(b);
        const SmoothFit fit = absolute ? spline.fit(r.cwiseAbs()) : spline.fit(r);
        e.values.row(b) = fit.eval(e.grid).transpose();
      }
      break;
    }
  }
  return e;
}

DiagnosticResult diagnose_sample(PlotKind kind, const BootstrapSample& sample, const DiagnosticOptions& options) {
  const FunctionEnsemble ensemble = build_ensemble(kind, sample, options.m_grid);
  DiagnosticResult result;
  result.kind = kind;
  result.grid = ensemble.grid;
  result.observed = ensemble.values.row(0).transpose();
  result.envelope = global_envelope(ensemble, options.alpha, options.mode);
  result.reject = result.envelope.observed_outside;
  result.p_value = result.envelope.p_value;
  result.B = options.B;
  result.seed = options.seed;
  result.failures = sample.failures;

  const auto n = sample.observed_residuals.size();
  result.points.resize(n, 2);
  switch (kind) {
    case PlotKind::QQ:
    case PlotKind::PP: {
      const Functional f = kind == PlotKind::QQ ? qq_function(sample.observed_residuals)
                                                : pp_function(sample.observed_residuals);
      result.points.col(0) = f.grid;
      result.points.col(1) = f.values;
      break;
    }
    case PlotKind::ResVsFits:
      result.points.col(0) = sample.eta;
      result.points.col(1) = sample.observed_residuals;
      break;
    case PlotKind::ScaleLocation:
      result.points.col(0) = sample.eta;
      result.points.col(1) = sample.observed_residuals.cwiseAbs();
      break;
  }
  return result;
}

std::vector<DiagnosticResult> plot_envelopes(const FittedModel& m, const std::vector<PlotKind>& kinds,
                                             const DiagnosticOptions& options) {
  const ModelCapability cap = standard_capability(m.kind, options.residual_kind, options.fit);
  const BootstrapSample sample = run_bootstrap(m, cap, options);
  std::vector<DiagnosticResult> out;
  out.reserve(kinds.size());
  for (PlotKind kind : kinds) out.push_back(diagnose_sample(kind, sample, options));
  return out;
}

DiagnosticResult plot_envelope(const FittedModel& m, PlotKind kind, const DiagnosticOptions& options) {
  return plot_envelopes(m, {kind}, options).front();
}

LoglikTest loglik_gof_from_sample(const BootstrapSample& sample, double alpha) {
  LoglikTest test;
  test.observed = sample.observed_loglik;
  Eigen::Index at_most = 0;
  for (Eigen::Index b = 0; b < sample.logliks.size(); ++b) at_most += sample.logliks[b] <= test.observed ? 1 : 0;
  const double B = static_cast<double>(sample.logliks.size() + 1);
  test.p_value = (1.0 + static_cast<double>(at_most)) / B;
  test.reject = test.p_value <= alpha + 1e-12;
  return test;
}

LoglikTest loglik_gof_test(const FittedModel& m, const DiagnosticOptions& options) {
  const ModelCapability cap = standard_capability(m.kind, options.residual_kind, options.fit);
  return loglik_gof_from_sample(run_bootstrap(m, cap, options), options.alpha);
}

}  // namespace envdiag
