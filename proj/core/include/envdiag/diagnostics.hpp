#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "envdiag/envelope.hpp"
#include "envdiag/fitters.hpp"
#include "envdiag/model.hpp"
#include "envdiag/residuals.hpp"

namespace envdiag {

enum class PlotKind { QQ, PP, ResVsFits, ScaleLocation };

std::string_view to_string(PlotKind kind);
/// Accepts "qq", "pp", "res_vs_fits"/"resfit", "scale_location"/"scale-location".
PlotKind parse_plot_kind(std::string_view name);

/// A diagnostic function sampled on its evaluation grid.
struct Functional {
  Vector grid;
  Vector values;
};

/// Standard normal cdf and quantile.
double normal_cdf(double x);
double normal_quantile(double p);

/// Sorted residuals against z_i = Phi^{-1}((i - 0.5) / n).
Functional qq_function(const Vector& e);
/// Phi of the sorted residuals against (i - 0.5) / n.
Functional pp_function(const Vector& e);
/// Smoother of e on eta, evaluated on m_grid points spanning the range of eta.
Functional resfit_function(const Vector& eta, const Vector& e, int m_grid);
/// As resfit_function with |e|.
Functional scalelocation_function(const Vector& eta, const Vector& e, int m_grid);

struct DiagnosticOptions {
  /// Total number of functions in the ensemble, observed one included.
  int B = 199;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  int m_grid = 64;
  EnvelopeMode mode = EnvelopeMode::StudentizedMad;
  FitControl fit;
  /// Defaults to standardized (LM) or deviance (Poisson) residuals.
  std::optional<ResidualKind> residual_kind;
  /// Failed refits are redrawn; more than this fraction of B is an error.
  double max_failure_fraction = 0.1;
  /// Worker threads for replicates; 0 uses ENVDIAG_THREADS.
  std::size_t threads = 0;
};

/// simulate_response / refit / residuals / linear_predictors for the built-in
/// model classes.
ModelCapability standard_capability(ModelKind kind, std::optional<ResidualKind> residual_kind = {},
                                    FitControl fit = {});

/// Residual vectors and refit log-likelihoods from the parametric bootstrap.
struct BootstrapSample {
  Vector eta;
  Vector observed_residuals;
  double observed_loglik = 0.0;
  /// One entry per simulated replicate (B - 1 of them).
  std::vector<Vector> residuals;
  Vector logliks;
  int failures = 0;
};

/// Runs B - 1 replicates of simulate -> refit -> residuals. Replicate b,
/// attempt a draws from make_stream(seed, {b, a}), so results do not depend
/// on thread count.
BootstrapSample run_bootstrap(const FittedModel& m, const ModelCapability& capability,
                              const DiagnosticOptions& options);

/// Ensemble for one plot kind; row 0 is the observed functional. Smoother
/// functionals of every replicate are taken against the observed eta.
FunctionEnsemble build_ensemble(PlotKind kind, const BootstrapSample& sample, int m_grid);

struct DiagnosticResult {
  PlotKind kind = PlotKind::QQ;
  Vector grid;
  Vector observed;
  GlobalEnvelope envelope;
  /// Scatter overlay (x, y) in plot coordinates.
  Matrix points;
  bool reject = false;
  double p_value = 1.0;
  int B = 0;
  std::uint64_t seed = 0;
  int failures = 0;
};

DiagnosticResult diagnose_sample(PlotKind kind, const BootstrapSample& sample, const DiagnosticOptions& options);

/// Global envelope for one diagnostic plot of a fitted model.
DiagnosticResult plot_envelope(const FittedModel& m, PlotKind kind, const DiagnosticOptions& options = {});

/// Several plots sharing one bootstrap; identical to separate plot_envelope
/// calls with the same options.
std::vector<DiagnosticResult> plot_envelopes(const FittedModel& m, const std::vector<PlotKind>& kinds,
                                             const DiagnosticOptions& options = {});

struct LoglikTest {
  double p_value = 1.0;
  bool reject = false;
  double observed = 0.0;
};

/// p = (1 + #{b : logL_b <= logL_obs}) / B over B - 1 simulated refits;
/// small observed log-likelihoods indicate lack of fit.
LoglikTest loglik_gof_from_sample(const BootstrapSample& sample, double alpha);
LoglikTest loglik_gof_test(const FittedModel& m, const DiagnosticOptions& options = {});

}  // namespace envdiag
