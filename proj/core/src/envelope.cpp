#include "envdiag/envelope.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace envdiag {

namespace {

constexpr double kZeroVariance = 1e-24;

void validate(const FunctionEnsemble& e, double alpha, Eigen::Index min_rows) {
  if (e.B() < min_rows) {
    throw Error(ErrorCode::InvalidArgument, "ensemble needs at least " + std::to_string(min_rows) + " rows");
  }
  if (e.m() < 1) throw Error(ErrorCode::InvalidArgument, "ensemble grid is empty");
  if (e.grid.size() != e.m()) throw Error(ErrorCode::InvalidArgument, "grid length differs from ensemble width");
  if (!e.values.allFinite()) throw Error(ErrorCode::InvalidArgument, "ensemble has non-finite entries");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  if (alpha * static_cast<double>(e.B()) < 1.0 - 1e-9) {
    throw Error(ErrorCode::AlphaTooSmall,
                "alpha = " + std::to_string(alpha) + " is below 1/B for B = " + std::to_string(e.B()));
  }
}

// Shared tail of both constructors once `stats` and the half-widths are known.
GlobalEnvelope finish(const FunctionEnsemble& e, GlobalEnvelope env, const Vector& half_width_unit) {
  const auto B = e.B();
  std::vector<double> sorted(env.stats.data(), env.stats.data() + B);
  std::sort(sorted.begin(), sorted.end());
  env.critical = sorted[static_cast<std::size_t>(critical_rank(B, env.alpha) - 1)];

  env.lower = env.center - env.critical * half_width_unit;
  env.upper = env.center + env.critical * half_width_unit;
  // Rows within the critical value belong inside the band; widen by the
  // rounding error of center +/- critical * scale where needed.
  for (Eigen::Index b = 0; b < B; ++b) {
    if (env.stats[b] > env.critical) continue;
    env.lower = env.lower.cwiseMin(e.values.row(b).transpose());
    env.upper = env.upper.cwiseMax(e.values.row(b).transpose());
  }

  const double observed = env.stats[0];
  Eigen::Index at_least = 0;
  for (Eigen::Index b = 0; b < B; ++b) at_least += env.stats[b] >= observed ? 1 : 0;
  env.p_value = static_cast<double>(at_least) / static_cast<double>(B);
  env.observed_outside = observed > env.critical;
  return env;
}

}  // namespace

std::string_view to_string(EnvelopeMode mode) {
  return mode == EnvelopeMode::Mad ? "mad" : "studentized-mad";
}

Vector center_function(const FunctionEnsemble& e) { return e.values.colwise().mean().transpose(); }

Eigen::Index critical_rank(Eigen::Index B, double alpha) {
  const double target = (1.0 - alpha) * static_cast<double>(B);
  auto rank = static_cast<Eigen::Index>(std::ceil(target - 1e-9));
  return std::clamp<Eigen::Index>(rank, 1, B);
}

GlobalEnvelope mad_envelope(const FunctionEnsemble& e, double alpha) {
  validate(e, alpha, 2);
  GlobalEnvelope env;
  env.mode = EnvelopeMode::Mad;
  env.alpha = alpha;
  env.center = center_function(e);
  const Matrix dev = e.values.rowwise() - env.center.transpose();
  env.stats = dev.cwiseAbs().rowwise().maxCoeff();
  return finish(e, std::move(env), Vector::Ones(e.m()));
}

GlobalEnvelope studentized_mad_envelope(const FunctionEnsemble& e, double alpha) {
  validate(e, alpha, 3);
  const auto B = e.B();
  const auto m = e.m();
  GlobalEnvelope env;
  env.mode = EnvelopeMode::StudentizedMad;
  env.alpha = alpha;
  env.center = center_function(e);
  const Matrix dev = e.values.rowwise() - env.center.transpose();
  const Vector variance = dev.colwise().squaredNorm().transpose() / static_cast<double>(B - 1);

  env.pointwise_sd = Vector::Zero(m);
  env.stats = Vector::Zero(B);
  for (Eigen::Index r = 0; r < m; ++r) {
    if (variance[r] < kZeroVariance) {
      ++env.zero_variance_points;
      continue;
    }
    env.pointwise_sd[r] = std::sqrt(variance[r]);
    for (Eigen::Index b = 0; b < B; ++b) {
      env.stats[b] = std::max(env.stats[b], std::abs(dev(b, r)) / env.pointwise_sd[r]);
    }
  }
  const Vector scale = env.pointwise_sd;
  return finish(e, std::move(env), scale);
}

GlobalEnvelope global_envelope(const FunctionEnsemble& e, double alpha, EnvelopeMode mode) {
  return mode == EnvelopeMode::Mad ? mad_envelope(e, alpha) : studentized_mad_envelope(e, alpha);
}

EnvelopeTest envelope_test(const FunctionEnsemble& e, double alpha, EnvelopeMode mode) {
  const GlobalEnvelope env = global_envelope(e, alpha, mode);
  return {env.observed_outside, env.p_value};
}

bool strays_outside(const GlobalEnvelope& env, const Eigen::Ref<const Vector>& row) {
  for (Eigen::Index r = 0; r < row.size(); ++r) {
    if (row[r] < env.lower[r] || row[r] > env.upper[r]) return true;
  }
  return false;
}

}  // namespace envdiag
