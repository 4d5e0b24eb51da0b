#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "envdiag/envelope.hpp"

using namespace envdiag;

namespace {

FunctionEnsemble gaussian_ensemble(Eigen::Index B, Eigen::Index m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  FunctionEnsemble e;
  e.grid = Vector::LinSpaced(m, 0.0, 1.0);
  e.values.resize(B, m);
  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index r = 0; r < m; ++r) e.values(b, r) = z(rng);
  return e;
}

FunctionEnsemble hand_example() {
  FunctionEnsemble e;
  e.grid = Vector::Zero(1);
  e.values.resize(4, 1);
  e.values << 0, 1, 2, 3;
  return e;
}

int count_exceeding(const GlobalEnvelope& env) {
  int k = 0;
  for (Eigen::Index b = 0; b < env.stats.size(); ++b) k += env.stats[b] > env.critical ? 1 : 0;
  return k;
}

}  // namespace

TEST_CASE("center function") {
  CHECK(center_function(hand_example())[0] == 1.5);
  FunctionEnsemble e;
  e.grid = Vector::LinSpaced(2, 0, 1);
  e.values.resize(2, 2);
  e.values << 0, 2, 2, 0;
  CHECK(center_function(e) == Vector::Ones(2));
}

TEST_CASE("critical rank") {
  CHECK(critical_rank(200, 0.05) == 190);
  CHECK(critical_rank(4, 0.5) == 2);
  CHECK(critical_rank(199, 0.05) == 190);  // 189.05 rounds up
  CHECK(critical_rank(100, 0.05) == 95);
  CHECK(critical_rank(99, 0.05) == 95);
}

TEST_CASE("MAD envelope hand example") {
  const GlobalEnvelope env = mad_envelope(hand_example(), 0.5);
  CHECK(env.center[0] == 1.5);
  CHECK(env.stats == (Vector(4) << 1.5, 0.5, 0.5, 1.5).finished());
  CHECK(env.critical == 0.5);
  CHECK(env.lower[0] == 1.0);
  CHECK(env.upper[0] == 2.0);
  const FunctionEnsemble e = hand_example();
  CHECK(strays_outside(env, e.values.row(0).transpose()));
  CHECK_FALSE(strays_outside(env, e.values.row(1).transpose()));
  CHECK_FALSE(strays_outside(env, e.values.row(2).transpose()));
  CHECK(strays_outside(env, e.values.row(3).transpose()));
  CHECK(env.observed_outside);
  CHECK(env.p_value == 0.5);
}

TEST_CASE("identical rows give a degenerate envelope") {
  FunctionEnsemble e;
  e.grid = Vector::LinSpaced(3, 0, 1);
  e.values = Matrix::Constant(20, 3, 2.5);
  const GlobalEnvelope env = mad_envelope(e, 0.05);
  CHECK(env.critical == 0.0);
  CHECK(env.lower == env.center);
  CHECK(env.upper == env.center);
  CHECK(count_exceeding(env) == 0);
  CHECK_FALSE(env.observed_outside);
  CHECK(env.p_value == 1.0);

  const GlobalEnvelope st = studentized_mad_envelope(e, 0.05);
  CHECK(st.zero_variance_points == 3);
  CHECK(st.lower == st.center);
  CHECK_FALSE(st.observed_outside);
}

TEST_CASE("Studentized envelope hand example") {
  const GlobalEnvelope env = studentized_mad_envelope(hand_example(), 0.5);
  const double sd = std::sqrt(5.0 / 3.0);
  CHECK(env.pointwise_sd[0] == doctest::Approx(sd).epsilon(1e-15));
  CHECK(env.stats[0] == doctest::Approx(1.5 / sd).epsilon(1e-15));
  CHECK(env.stats[1] == doctest::Approx(0.5 / sd).epsilon(1e-15));
  CHECK(env.critical == doctest::Approx(0.5 / sd).epsilon(1e-15));
  CHECK(env.lower[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(env.upper[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(env.observed_outside);
  CHECK(env.p_value == 0.5);
}

TEST_CASE("Studentized outside-set is invariant to pointwise rescaling") {
  const FunctionEnsemble base = gaussian_ensemble(50, 8, 3);
  FunctionEnsemble scaled = base;
  for (Eigen::Index r = 0; r < 8; ++r) scaled.values.col(r) *= 0.1 + 3.0 * r;
  const GlobalEnvelope a = studentized_mad_envelope(base, 0.1);
  const GlobalEnvelope b = studentized_mad_envelope(scaled, 0.1);
  for (Eigen::Index i = 0; i < 50; ++i) CHECK((a.stats[i] > a.critical) == (b.stats[i] > b.critical));
}

TEST_CASE("about alpha * B iid rows fall outside on a one-point grid") {
  const FunctionEnsemble e = gaussian_ensemble(1000, 1, 77);
  const GlobalEnvelope env = studentized_mad_envelope(e, 0.05);
  int outside = 0;
  for (Eigen::Index b = 0; b < 1000; ++b) outside += strays_outside(env, e.values.row(b).transpose()) ? 1 : 0;
  CHECK(std::abs(outside - 50) <= 21);
}

TEST_CASE("envelope_test") {
  SUBCASE("observed at the center never rejects") {
    FunctionEnsemble e;
    e.grid = Vector::Zero(1);
    e.values.resize(5, 1);
    e.values << 2, 0, 4, 1, 3;
    for (EnvelopeMode mode : {EnvelopeMode::Mad, EnvelopeMode::StudentizedMad}) {
      const EnvelopeTest t = envelope_test(e, 0.2, mode);
      CHECK_FALSE(t.reject);
      CHECK(t.p_value == 1.0);
    }
  }
  SUBCASE("extreme observed row rejects") {
    FunctionEnsemble e = hand_example();
    e.values(0, 0) = 3;
    e.values(3, 0) = 0;
    CHECK(envelope_test(e, 0.5, EnvelopeMode::Mad).reject);
  }
  SUBCASE("exact level under exchangeability") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> z;
    int rejections = 0;
    const int reps = 2000;
    FunctionEnsemble e;
    e.grid = Vector::LinSpaced(5, 0, 1);
    e.values.resize(100, 5);
    for (int rep = 0; rep < reps; ++rep) {
      for (Eigen::Index b = 0; b < 100; ++b)
        for (Eigen::Index r = 0; r < 5; ++r) e.values(b, r) = z(rng);
      rejections += envelope_test(e, 0.05, EnvelopeMode::StudentizedMad).reject ? 1 : 0;
    }
    const double rate = static_cast<double>(rejections) / reps;
    CHECK(rate <= 0.05 + 3 * std::sqrt(0.05 * 0.95 / reps));
  }
}

TEST_CASE("containment and outside-set equivalence on random ensembles") {
  std::uint64_t seed = 100;
  for (Eigen::Index B : {20, 100, 200}) {
    for (Eigen::Index m : {1, 5, 50}) {
      for (EnvelopeMode mode : {EnvelopeMode::Mad, EnvelopeMode::StudentizedMad}) {
        const FunctionEnsemble e = gaussian_ensemble(B, m, ++seed);
        const GlobalEnvelope env = global_envelope(e, 0.05, mode);
        CHECK(count_exceeding(env) <= static_cast<int>(std::floor(0.05 * B)));
        CHECK((env.lower.array() <= env.center.array()).all());
        CHECK((env.center.array() <= env.upper.array()).all());
        for (Eigen::Index b = 0; b < B; ++b) {
          CHECK(strays_outside(env, e.values.row(b).transpose()) == (env.stats[b] > env.critical));
        }
        CHECK(env.observed_outside == (env.stats[0] > env.critical));
      }
    }
  }
}

TEST_CASE("adding a constant shifts the envelope and nothing else") {
  const FunctionEnsemble e = gaussian_ensemble(60, 10, 9);
  FunctionEnsemble shifted = e;
  shifted.values.array() += 3.0;
  for (EnvelopeMode mode : {EnvelopeMode::Mad, EnvelopeMode::StudentizedMad}) {
    const GlobalEnvelope a = global_envelope(e, 0.05, mode);
    const GlobalEnvelope b = global_envelope(shifted, 0.05, mode);
    CHECK((b.center.array() - a.center.array() - 3.0).abs().maxCoeff() < 1e-12);
    CHECK((b.lower.array() - a.lower.array() - 3.0).abs().maxCoeff() < 1e-12);
    CHECK((b.upper.array() - a.upper.array() - 3.0).abs().maxCoeff() < 1e-12);
    CHECK((b.stats - a.stats).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(b.critical == doctest::Approx(a.critical).epsilon(1e-12));
    CHECK(b.p_value == a.p_value);
  }
}

TEST_CASE("MAD and Studentized MAD agree under constant pointwise variance") {
  // Columns are permutations of one another, so every column has the same
  // mean and variance.
  const Eigen::Index B = 40, m = 6;
  std::mt19937_64 rng(13);
  std::normal_distribution<double> z;
  Vector base(B);
  for (Eigen::Index b = 0; b < B; ++b) base[b] = z(rng);
  FunctionEnsemble e;
  e.grid = Vector::LinSpaced(m, 0, 1);
  e.values.resize(B, m);
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(B));
  for (Eigen::Index b = 0; b < B; ++b) perm[static_cast<std::size_t>(b)] = b;
  for (Eigen::Index r = 0; r < m; ++r) {
    std::shuffle(perm.begin(), perm.end(), rng);
    for (Eigen::Index b = 0; b < B; ++b) e.values(b, r) = base[perm[static_cast<std::size_t>(b)]];
  }
  const GlobalEnvelope a = mad_envelope(e, 0.1);
  const GlobalEnvelope s = studentized_mad_envelope(e, 0.1);
  for (Eigen::Index b = 0; b < B; ++b) CHECK((a.stats[b] > a.critical) == (s.stats[b] > s.critical));
  CHECK(a.p_value == s.p_value);
}

TEST_CASE("p-value bounds") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const FunctionEnsemble e = gaussian_ensemble(40, 4, 500 + seed);
    const GlobalEnvelope env = studentized_mad_envelope(e, 0.05);
    CHECK(env.p_value >= 1.0 / 40);
    CHECK(env.p_value <= 1.0);
    if (env.observed_outside) CHECK(env.p_value <= 0.05 + 1.0 / 40);
  }
}

TEST_CASE("argument errors") {
  const FunctionEnsemble e = gaussian_ensemble(10, 3, 1);
  try {
    mad_envelope(e, 0.05);
    FAIL("expected AlphaTooSmall");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::AlphaTooSmall);
  }
  CHECK_NOTHROW(mad_envelope(e, 0.1));
  CHECK_THROWS_AS(mad_envelope(e, 0.0), Error);
  CHECK_THROWS_AS(mad_envelope(e, 1.0), Error);

  FunctionEnsemble two = gaussian_ensemble(2, 3, 1);
  CHECK_NOTHROW(mad_envelope(two, 0.5));
  CHECK_THROWS_AS(studentized_mad_envelope(two, 0.5), Error);

  FunctionEnsemble bad = e;
  bad.values(2, 1) = NAN;
  CHECK_THROWS_AS(mad_envelope(bad, 0.5), Error);
}

TEST_CASE("zero-variance points are excluded and flagged") {
  FunctionEnsemble e = gaussian_ensemble(30, 4, 44);
  e.values.col(2).setConstant(1.0);
  const GlobalEnvelope env = studentized_mad_envelope(e, 0.1);
  CHECK(env.zero_variance_points == 1);
  CHECK(env.lower[2] == 1.0);
  CHECK(env.upper[2] == 1.0);
  CHECK(std::isfinite(env.critical));
}
