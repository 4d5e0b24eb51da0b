#include <random>

#include <benchmark/benchmark.h>

#include "envdiag/diagnostics.hpp"
#include "envdiag/envelope.hpp"
#include "envdiag/fitters.hpp"
#include "envdiag/sim_harness.hpp"
#include "envdiag/smoother.hpp"

using namespace envdiag;

namespace {

Dataset scenario_data(ScenarioModel model, int n) {
  ScenarioSpec s;
  s.model = model;
  s.n = n;
  RandomStream stream = make_stream(1, {0});
  return generate_dataset(s, stream);
}

void BM_StudentizedEnvelope(benchmark::State& state) {
  const auto B = state.range(0), m = state.range(1);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  FunctionEnsemble e;
  e.grid = Vector::LinSpaced(m, 0, 1);
  e.values = Matrix::NullaryExpr(B, m, [&] { return z(rng); });
  for (auto _ : state) benchmark::DoNotOptimize(studentized_mad_envelope(e, 0.05));
}
BENCHMARK(BM_StudentizedEnvelope)->Args({99, 64})->Args({199, 64})->Args({999, 64});

void BM_SmootherFit(benchmark::State& state) {
  const auto n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  Vector x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = (i + 0.5) / n;
    y[i] = std::sin(6 * x[i]) + 0.3 * z(rng);
  }
  const PenalizedSpline spline(x);
  for (auto _ : state) benchmark::DoNotOptimize(spline.fit(y));
}
BENCHMARK(BM_SmootherFit)->Arg(40)->Arg(80)->Arg(400);

void BM_FitLm(benchmark::State& state) {
  const Dataset d = scenario_data(ScenarioModel::A_Lm, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(fit_lm(d));
}
BENCHMARK(BM_FitLm)->Arg(40)->Arg(80);

void BM_FitPoisson(benchmark::State& state) {
  const Dataset d = scenario_data(ScenarioModel::B_Glm, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(fit_glm_poisson(d));
}
BENCHMARK(BM_FitPoisson)->Arg(40)->Arg(80);

void BM_FitGlmm(benchmark::State& state) {
  const Dataset d = scenario_data(ScenarioModel::C_Glmm, 40);
  FitControl c;
  c.quad_points = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(fit_glmm_poisson_ri(d, c));
}
BENCHMARK(BM_FitGlmm)->Arg(15)->Arg(51);

void BM_PlotEnvelopes(benchmark::State& state) {
  const Dataset d = scenario_data(ScenarioModel::B_Glm, 40);
  const FittedModel m = fit_glm_poisson(d);
  DiagnosticOptions opts;
  opts.B = 99;
  opts.threads = 1;
  const std::vector<PlotKind> kinds = {PlotKind::QQ, PlotKind::PP, PlotKind::ResVsFits, PlotKind::ScaleLocation};
  for (auto _ : state) benchmark::DoNotOptimize(plot_envelopes(m, kinds, opts));
}
BENCHMARK(BM_PlotEnvelopes)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
