#include "envdiag/model.hpp"

#include <algorithm>
#include <string>

namespace envdiag {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::BadGrouping: return "BadGrouping";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::Separation: return "Separation";
    case ErrorCode::LeverageOne: return "LeverageOne";
    case ErrorCode::DegenerateX: return "DegenerateX";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::AlphaTooSmall: return "AlphaTooSmall";
    case ErrorCode::TooManyRefitFailures: return "TooManyRefitFailures";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonNumericCell: return "NonNumericCell";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Lm: return "lm";
    case ModelKind::GlmPoisson: return "poisson";
    case ModelKind::GlmmPoissonRi: return "poisson-ri";
  }
  return "unknown";
}

int Dataset::n_groups() const {
  if (!group || group->empty()) return 0;
  return *std::max_element(group->begin(), group->end()) + 1;
}

Eigen::Index design_rank(const Matrix& X) {
  Eigen::ColPivHouseholderQR<Matrix> qr(X);
  qr.setThreshold(1e-10);
  return qr.rank();
}

Dataset validate_dataset(Dataset d) {
  const auto n = d.y.size();
  if (n < 3) throw Error(ErrorCode::TooFewRows, "need at least 3 observations, got " + std::to_string(n));
  if (d.X.rows() != n) {
    throw Error(ErrorCode::InvalidArgument, "design has " + std::to_string(d.X.rows()) +
                                                " rows but response has " + std::to_string(n));
  }
  if (d.X.cols() < 1) throw Error(ErrorCode::InvalidArgument, "design has no columns");
  if (!d.y.allFinite() || !d.X.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite data");
  if (d.X.cols() > n || design_rank(d.X) < d.X.cols()) {
    throw Error(ErrorCode::RankDeficient, "design matrix is not of full column rank");
  }
  if (d.group) {
    const auto& g = *d.group;
    if (static_cast<Eigen::Index>(g.size()) != n) {
      throw Error(ErrorCode::BadGrouping, "group vector length differs from response length");
    }
    if (g.empty() || *std::min_element(g.begin(), g.end()) < 0) {
      throw Error(ErrorCode::BadGrouping, "group labels must be nonnegative");
    }
    std::vector<int> counts(static_cast<std::size_t>(*std::max_element(g.begin(), g.end())) + 1, 0);
    for (int label : g) ++counts[static_cast<std::size_t>(label)];
    for (std::size_t j = 0; j < counts.size(); ++j) {
      if (counts[j] == 0) {
        throw Error(ErrorCode::BadGrouping, "group label " + std::to_string(j) + " has no observations");
      }
    }
  }
  return d;
}

Vector linear_predictors(const FittedModel& m) { return m.dataset().X * m.beta; }

RandomStream make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * path.size());
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto v : path) push(v);
  std::seed_seq seq(words.begin(), words.end());
  return RandomStream(seq);
}

}  // namespace envdiag
