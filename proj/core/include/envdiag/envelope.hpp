#pragma once

#include <vector>

#include "envdiag/model.hpp"

namespace envdiag {

/// B functions sampled on a common grid. Row 0 is the observed function,
/// rows 1..B-1 are simulated.
struct FunctionEnsemble {
  Vector grid;
  Matrix values;

  Eigen::Index B() const { return values.rows(); }
  Eigen::Index m() const { return values.cols(); }
};

enum class EnvelopeMode { Mad, StudentizedMad };

std::string_view to_string(EnvelopeMode mode);

struct GlobalEnvelope {
  Vector center;
  Vector lower;
  Vector upper;
  /// Pointwise standard deviation (Studentized mode; empty for MAD).
  Vector pointwise_sd;
  double critical = 0.0;
  /// Extremity statistic of every row; stats[0] belongs to the observed row.
  Vector stats;
  double alpha = 0.05;
  EnvelopeMode mode = EnvelopeMode::StudentizedMad;
  double p_value = 1.0;
  bool observed_outside = false;
  /// Grid points dropped from the Studentized maximum because every row
  /// agrees there.
  int zero_variance_points = 0;
};

/// Columnwise mean over all rows, observed row included.
Vector center_function(const FunctionEnsemble& e);

/// Rank of the critical statistic among the B sorted statistics:
/// ceil((1 - alpha) * B), guarded against floating-point noise in the product.
Eigen::Index critical_rank(Eigen::Index B, double alpha);

/// Maximum absolute deviation envelope: center -/+ the critical deviation.
GlobalEnvelope mad_envelope(const FunctionEnsemble& e, double alpha);

/// Deviations scaled by the pointwise standard deviation before taking the
/// maximum; bounds are center -/+ critical * sd.
GlobalEnvelope studentized_mad_envelope(const FunctionEnsemble& e, double alpha);

GlobalEnvelope global_envelope(const FunctionEnsemble& e, double alpha, EnvelopeMode mode);

struct EnvelopeTest {
  bool reject = false;
  double p_value = 1.0;
};

/// Rejects when the observed row's statistic exceeds the critical value.
EnvelopeTest envelope_test(const FunctionEnsemble& e, double alpha, EnvelopeMode mode);

/// Whether `row` leaves [lower, upper] at some grid point.
bool strays_outside(const GlobalEnvelope& env, const Eigen::Ref<const Vector>& row);

}  // namespace envdiag
