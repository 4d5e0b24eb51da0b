#include <doctest.h>

#include <cmath>
#include <random>

#include "envdiag/fitters.hpp"
#include "envdiag/residuals.hpp"
#include "oracles.hpp"

using namespace envdiag;
using doctest::Approx;

namespace {

Dataset make(const std::vector<double>& y, const std::vector<double>& x) {
  Dataset d;
  const auto n = static_cast<Eigen::Index>(y.size());
  d.y = Eigen::Map<const Vector>(y.data(), n);
  d.X.resize(n, x.empty() ? 1 : 2);
  d.X.col(0).setOnes();
  if (!x.empty()) d.X.col(1) = Eigen::Map<const Vector>(x.data(), n);
  return d;
}

}  // namespace

TEST_CASE("fit_lm: exact line") {
  const FittedModel m = fit_lm(make({1, 2, 3}, {1, 2, 3}));
  CHECK(m.beta[0] == Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(m.beta[0]) < 1e-12);
  CHECK(m.beta[1] == Approx(1.0).epsilon(1e-12));
  CHECK((m.dataset().y - m.eta).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(m.degenerate);
}

TEST_CASE("fit_lm: hand-solved normal equations") {
  const FittedModel m = fit_lm(make({1, 2, 4}, {0, 1, 2}));
  CHECK(std::abs(m.beta[0] - 5.0 / 6.0) < 1e-12);
  CHECK(std::abs(m.beta[1] - 1.5) < 1e-12);
  // RSS = 1/6, n - p = 1, n = 3.
  CHECK(m.sigma == Approx(std::sqrt(1.0 / 6.0)));
  CHECK(m.sigma_ml == Approx(std::sqrt(1.0 / 18.0)));
  CHECK(m.loglik == Approx(-1.5 * (std::log(2 * M_PI / 18.0) + 1.0)));
}

TEST_CASE("fit_lm: constant response is degenerate") {
  const FittedModel m = fit_lm(make({2.5, 2.5, 2.5, 2.5}, {0.1, 0.7, 0.2, 0.9}));
  CHECK(m.beta[0] == Approx(2.5));
  CHECK(std::abs(m.beta[1]) < 1e-12);
  CHECK(m.sigma == 0.0);
  CHECK(m.degenerate);
  CHECK(standardized_residuals(m) == Vector::Zero(4));
}

TEST_CASE("fit_lm: residuals orthogonal to the design") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 20; ++rep) {
    Dataset d;
    const int n = 12;
    d.X.resize(n, 3);
    d.y.resize(n);
    for (int i = 0; i < n; ++i) {
      d.X(i, 0) = 1;
      d.X(i, 1) = z(rng);
      d.X(i, 2) = z(rng) * 10;
      d.y[i] = 3 + d.X(i, 1) + z(rng);
    }
    const FittedModel m = fit_lm(d);
    const Vector e = d.y - m.eta;
    const Vector xte = d.X.transpose() * e;
    for (Eigen::Index j = 0; j < 3; ++j) {
      CHECK(std::abs(xte[j]) < 1e-8 * d.X.col(j).norm() * std::max(1.0, e.norm()));
    }
    CHECK(log_likelihood(m, d.y) == Approx(m.loglik).epsilon(1e-12));
  }
}

TEST_CASE("fit_glm_poisson: intercept only gives log of the mean") {
  const FittedModel m = fit_glm_poisson(make({1, 2, 3}, {}));
  CHECK(std::abs(m.beta[0] - std::log(2.0)) < 1e-10);
  CHECK(log_likelihood(m, m.dataset().y) == Approx(m.loglik).epsilon(1e-14));
}

TEST_CASE("fit_glm_poisson: all-zero response reports separation") {
  try {
    fit_glm_poisson(make({0, 0, 0}, {}));
    FAIL("expected Separation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Separation);
  }
}

TEST_CASE("fit_glm_poisson: matches independent Newton maximization") {
  const Dataset d = make({1, 3, 9}, {0, 1, 2});
  const FittedModel m = fit_glm_poisson(d);
  const Vector ref = oracles::newton_poisson(d.y, d.X);
  CHECK(std::abs(m.beta[0] - ref[0]) < 1e-8);
  CHECK(std::abs(m.beta[1] - ref[1]) < 1e-8);
}

TEST_CASE("fit_glm_poisson: deviance is non-increasing across iterations") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> x(15), y(15);
    for (int i = 0; i < 15; ++i) {
      x[i] = u(rng);
      y[i] = static_cast<double>(std::poisson_distribution<int>(std::exp(-1 + 3 * x[i]))(rng));
    }
    std::vector<double> trace;
    try {
      detail::irls_poisson(make(y, x), {}, &trace);
    } catch (const Error&) {
      continue;
    }
    for (std::size_t t = 1; t < trace.size(); ++t) CHECK(trace[t] <= trace[t - 1]);
  }
}

TEST_CASE("gauss_hermite integrates polynomials against exp(-x^2)") {
  const GaussHermiteRule rule = gauss_hermite(15);
  CHECK(rule.weights.sum() == Approx(std::sqrt(M_PI)).epsilon(1e-13));
  // E[x^2] under exp(-x^2) / sqrt(pi) is 1/2, E[x^4] is 3/4.
  CHECK((rule.weights.array() * rule.nodes.array().square()).sum() == Approx(std::sqrt(M_PI) / 2));
  CHECK((rule.weights.array() * rule.nodes.array().pow(4)).sum() == Approx(3 * std::sqrt(M_PI) / 4));
  CHECK(rule.nodes[7] == 0.0);

  // Tail weights keep relative accuracy at high order: a plain integral of a
  // shifted normal density via the scaled weights.
  for (int n : {41, 81, 121}) {
    const GaussHermiteRule big = gauss_hermite(n);
    double acc = 0.0;
    for (int k = 0; k < n; ++k) {
      const double x = big.nodes[k];
      acc += big.scaled_weights[k] * std::exp(-0.5 * (x - 1.0) * (x - 1.0)) / std::sqrt(2 * M_PI);
    }
    CHECK(acc == Approx(1.0).epsilon(1e-12));
    CHECK(big.weights.sum() == Approx(std::sqrt(M_PI)).epsilon(1e-13));
  }
}

TEST_CASE("GLMM marginal loglik matches fixed 201-point quadrature") {
  for (double beta0 : {-1.0, 0.3, 2.0}) {
    Dataset d = make({2}, {});
    d.group = std::vector<int>{0};
    FittedModel m;
    m.kind = ModelKind::GlmmPoissonRi;
    m.data = std::make_shared<const Dataset>(d);
    m.beta = Vector::Constant(1, beta0);
    m.omega = 1.0;
    const double ref = oracles::ri_marginal_loglik({{2.0}}, beta0, 1.0);
    CHECK(std::abs(log_likelihood(m, d.y) - ref) < 1e-6);
  }
}

TEST_CASE("GLMM marginal loglik at omega = 0 is the GLM loglik") {
  Dataset d = make({1, 4, 2, 0, 3, 5}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  d.group = std::vector<int>{0, 1, 2, 0, 1, 2};
  FittedModel glm = fit_glm_poisson(d);
  FittedModel glmm = glm;
  glmm.kind = ModelKind::GlmmPoissonRi;
  glmm.omega = 0.0;
  CHECK(log_likelihood(glmm, d.y) == log_likelihood(glm, d.y));
}

TEST_CASE("fit_glmm_poisson_ri: two-group fixture matches grid-search oracle") {
  Dataset d = make({1, 1, 5, 5}, {});
  d.group = std::vector<int>{0, 0, 1, 1};
  const FittedModel m = fit_glmm_poisson_ri(d);
  auto objective = [](double b0, double omega) {
    return oracles::ri_marginal_loglik({{1.0, 1.0}, {5.0, 5.0}}, b0, omega);
  };
  const auto [b_ref, w_ref] = oracles::grid_search_2d(objective, -1.0, 3.0, 0.05, 3.0);
  CHECK(std::abs(m.beta[0] - b_ref) < 1e-3);
  CHECK(std::abs(m.omega - w_ref) < 1e-3);
  CHECK(!m.boundary_omega);
  CHECK(log_likelihood(m, d.y) == Approx(m.loglik).epsilon(1e-12));
}

TEST_CASE("fit_glmm_poisson_ri: no between-group variation collapses to the GLM") {
  // Every group carries the same responses, so the random-intercept variance
  // estimate sits on the boundary.
  std::vector<double> y, x;
  std::vector<int> g;
  const double pattern[] = {1, 0, 2, 3, 5, 4};
  for (int grp = 0; grp < 4; ++grp) {
    for (int i = 0; i < 6; ++i) {
      y.push_back(pattern[i]);
      x.push_back(i / 5.0);
      g.push_back(grp);
    }
  }
  Dataset d = make(y, x);
  d.group = g;
  const FittedModel glmm = fit_glmm_poisson_ri(d);
  const FittedModel glm = fit_glm_poisson(d);
  CHECK(glmm.omega < 1e-3);
  CHECK(glmm.boundary_omega);
  CHECK((glmm.beta - glm.beta).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("simulate_response") {
  SUBCASE("LM with sigma zero reproduces eta") {
    const FittedModel m = fit_lm(make({1, 2, 3}, {1, 2, 3}));
    RandomStream s = make_stream(1);
    CHECK((simulate_response(m, s) - m.eta).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("Poisson mean at eta = 0") {
    Dataset d = make(std::vector<double>(1000, 1.0), {});
    FittedModel m;
    m.kind = ModelKind::GlmPoisson;
    m.data = std::make_shared<const Dataset>(d);
    m.beta = Vector::Zero(1);
    double total = 0;
    for (int rep = 0; rep < 100; ++rep) {
      RandomStream s = make_stream(3, {static_cast<std::uint64_t>(rep)});
      total += simulate_response(m, s).sum();
    }
    CHECK(std::abs(total / 1e5 - 1.0) < 0.02);
  }
  SUBCASE("GLMM with omega zero draws exactly like the GLM") {
    Dataset d = make({1, 2, 3, 4, 5, 6}, {0, 1, 2, 3, 4, 5});
    d.group = std::vector<int>{0, 1, 0, 1, 0, 1};
    FittedModel glm;
    glm.kind = ModelKind::GlmPoisson;
    glm.data = std::make_shared<const Dataset>(d);
    glm.beta = Vector(2);
    glm.beta << 0.2, 0.3;
    FittedModel glmm = glm;
    glmm.kind = ModelKind::GlmmPoissonRi;
    glmm.omega = 0.0;
    RandomStream a = make_stream(9), b = make_stream(9);
    CHECK(simulate_response(glm, a) == simulate_response(glmm, b));
  }
  SUBCASE("bit-reproducible under a fixed stream") {
    const FittedModel m = fit_lm(make({1, 2.5, 2.9, 4.4}, {1, 2, 3, 4}));
    RandomStream a = make_stream(77, {1, 2}), b = make_stream(77, {1, 2});
    CHECK(simulate_response(m, a) == simulate_response(m, b));
  }
}

TEST_CASE("log_likelihood reference values") {
  SUBCASE("LM with zero residuals and unit scale") {
    FittedModel m;
    m.kind = ModelKind::Lm;
    m.data = std::make_shared<const Dataset>(make({0, 1, 2, 3}, {0, 1, 2, 3}));
    m.beta = Vector(2);
    m.beta << 0, 1;
    m.sigma = m.sigma_ml = 1.0;
    CHECK(log_likelihood(m, m.dataset().y) == Approx(-2.0 * std::log(2 * M_PI)));
  }
  SUBCASE("Poisson y = 1 at eta = 0") {
    FittedModel m;
    m.kind = ModelKind::GlmPoisson;
    m.data = std::make_shared<const Dataset>(make({1, 1, 1}, {}));
    m.beta = Vector::Zero(1);
    CHECK(log_likelihood(m, Vector::Ones(3)) == Approx(-3.0));
  }
  SUBCASE("stored loglik agrees for every kind") {
    Dataset d = make({2, 0, 1, 4, 3, 1, 6, 2, 5, 3}, {0, .1, .2, .3, .4, .5, .6, .7, .8, .9});
    d.group = std::vector<int>{0, 1, 2, 3, 4, 0, 1, 2, 3, 4};
    for (ModelKind kind : {ModelKind::Lm, ModelKind::GlmPoisson, ModelKind::GlmmPoissonRi}) {
      const FittedModel m = fit_model(kind, d);
      CHECK(std::abs(log_likelihood(m, d.y) - m.loglik) < 1e-10);
    }
  }
}
