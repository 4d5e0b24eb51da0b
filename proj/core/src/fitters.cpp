#include "envdiag/fitters.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

namespace envdiag {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
constexpr double kOmegaFloor = 1e-6;
// Fitted means below this are treated as a weight underflow in IRLS.
constexpr double kMuUnderflow = 1e-10;

double poisson_loglik(const Vector& y, const Vector& eta) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    ll += y[i] * eta[i] - std::exp(eta[i]) - std::lgamma(y[i] + 1.0);
  }
  return ll;
}

void require_counts(const Vector& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] < 0.0 || y[i] != std::floor(y[i])) {
      throw Error(ErrorCode::InvalidArgument,
                  "Poisson response must hold nonnegative integers (row " + std::to_string(i) + ")");
    }
  }
}

std::shared_ptr<const Dataset> share(const Dataset& d) { return std::make_shared<const Dataset>(d); }

}  // namespace

// ---------------------------------------------------------------------------
// Linear model

FittedModel fit_lm(const Dataset& d) {
  const auto n = d.n();
  const auto p = d.p();
  Eigen::ColPivHouseholderQR<Matrix> qr(d.X);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) throw Error(ErrorCode::RankDeficient, "design matrix is not of full column rank");

  FittedModel m;
  m.kind = ModelKind::Lm;
  m.data = share(d);
  m.beta = qr.solve(d.y);
  m.eta = d.X * m.beta;
  const double rss = (d.y - m.eta).squaredNorm();
  const double scale = std::max({d.y.squaredNorm(), 1.0});
  if (rss <= 1e-24 * scale || n == p) {
    m.degenerate = true;
    m.sigma = 0.0;
    m.sigma_ml = 0.0;
    m.loglik = std::numeric_limits<double>::infinity();
    return m;
  }
  m.sigma = std::sqrt(rss / static_cast<double>(n - p));
  m.sigma_ml = std::sqrt(rss / static_cast<double>(n));
  m.loglik = -0.5 * static_cast<double>(n) * (kLog2Pi + 2.0 * std::log(m.sigma_ml) + 1.0);
  return m;
}

// ---------------------------------------------------------------------------
// Poisson GLM

double detail::poisson_deviance(const Vector& y, const Vector& mu) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double ylogy = y[i] > 0.0 ? y[i] * std::log(y[i] / mu[i]) : 0.0;
    dev += ylogy - (y[i] - mu[i]);
  }
  return 2.0 * dev;
}

FittedModel detail::irls_poisson(const Dataset& d, const FitControl& c,
                                 std::vector<double>* deviance_trace) {
  require_counts(d.y);
  const auto p = d.p();

  Vector beta = Vector::Zero(p);
  beta[0] = std::log(d.y.mean() + 0.1);
  Vector eta = d.X * beta;
  Vector mu = eta.array().exp();
  double dev = poisson_deviance(d.y, mu);
  if (deviance_trace) deviance_trace->push_back(dev);

  for (int iter = 1; iter <= c.max_iter; ++iter) {
    const Vector w_sqrt = mu.array().sqrt();
    const Vector z = eta.array() + (d.y - mu).array() / mu.array();
    const Matrix Xw = w_sqrt.asDiagonal() * d.X;
    const Vector zw = w_sqrt.cwiseProduct(z);
    Eigen::ColPivHouseholderQR<Matrix> qr(Xw);
    qr.setThreshold(1e-12);
    if (qr.rank() < p) {
      throw Error(ErrorCode::Separation, "weighted design lost rank at iteration " + std::to_string(iter));
    }
    Vector beta_new = qr.solve(zw);

    // Step halving keeps the deviance non-increasing.
    Vector eta_new = d.X * beta_new;
    Vector mu_new = eta_new.array().exp();
    double dev_new = poisson_deviance(d.y, mu_new);
    int halvings = 0;
    while (!std::isfinite(dev_new) || dev_new > dev * (1.0 + 1e-12) + 1e-300) {
      if (++halvings > 40) {
        throw Error(ErrorCode::NonConvergence, "step halving failed at iteration " + std::to_string(iter));
      }
      beta_new = 0.5 * (beta + beta_new);
      eta_new = d.X * beta_new;
      mu_new = eta_new.array().exp();
      dev_new = poisson_deviance(d.y, mu_new);
    }
    dev_new = std::min(dev_new, dev);

    if (mu_new.minCoeff() < kMuUnderflow && dev_new < dev) {
      throw Error(ErrorCode::Separation,
                  "fitted mean underflowed while deviance still decreasing at iteration " +
                      std::to_string(iter) + " (beta0 = " + std::to_string(beta_new[0]) + ")");
    }

    const double change = std::abs(dev - dev_new) / (std::abs(dev_new) + 0.1);
    beta = std::move(beta_new);
    eta = std::move(eta_new);
    mu = std::move(mu_new);
    dev = dev_new;
    if (deviance_trace) deviance_trace->push_back(dev);

    if (change < c.tol) {
      FittedModel m;
      m.kind = ModelKind::GlmPoisson;
      m.data = share(d);
      m.beta = beta;
      m.eta = eta;
      m.loglik = poisson_loglik(d.y, eta);
      m.iterations = iter;
      return m;
    }
  }
  throw Error(ErrorCode::NonConvergence,
              "IRLS did not converge in " + std::to_string(c.max_iter) + " iterations");
}

FittedModel fit_glm_poisson(const Dataset& d, const FitControl& c) {
  return detail::irls_poisson(d, c, nullptr);
}

// ---------------------------------------------------------------------------
// Gauss-Hermite rule

GaussHermiteRule gauss_hermite(int n_points) {
  if (n_points < 1) throw Error(ErrorCode::InvalidArgument, "quadrature needs at least one node");
  // Nodes start from the eigenvalues of the Jacobi matrix of the Hermite
  // recurrence and are polished by Newton on the orthonormal polynomial.
  // Weights come from the Christoffel function rather than eigenvector
  // components, which lose all relative accuracy in the tails.
  Matrix J = Matrix::Zero(n_points, n_points);
  for (int i = 1; i < n_points; ++i) {
    J(i, i - 1) = J(i - 1, i) = std::sqrt(0.5 * i);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(J, Eigen::EigenvaluesOnly);
  GaussHermiteRule rule;
  rule.nodes = eig.eigenvalues();
  rule.weights.resize(n_points);
  rule.scaled_weights.resize(n_points);

  // Orthonormal Hermite functions q_k(x) = p_k(x) exp(-x^2 / 2); returns
  // q_n, q_{n-1} and sum_{k<n} q_k^2.
  auto hermite = [n_points](double x, double& qn, double& qn1, double& sum_sq) {
    double prev = 0.0;
    double cur = std::exp(-0.5 * x * x) / std::pow(std::numbers::pi, 0.25);
    sum_sq = 0.0;
    for (int k = 0; k < n_points; ++k) {
      sum_sq += cur * cur;
      const double next = std::sqrt(2.0 / (k + 1)) * x * cur - std::sqrt(static_cast<double>(k) / (k + 1)) * prev;
      prev = cur;
      cur = next;
    }
    qn = cur;
    qn1 = prev;
  };
  for (int i = 0; i < n_points; ++i) {
    double x = rule.nodes[i], qn = 0.0, qn1 = 0.0, sum_sq = 0.0;
    for (int it = 0; it < 3; ++it) {
      hermite(x, qn, qn1, sum_sq);
      // p_n' = sqrt(2n) p_{n-1}; the exp factor cancels in the ratio.
      x -= qn / (std::sqrt(2.0 * n_points) * qn1);
    }
    hermite(x, qn, qn1, sum_sq);
    rule.nodes[i] = x;
    rule.scaled_weights[i] = 1.0 / sum_sq;
    rule.weights[i] = rule.scaled_weights[i] * std::exp(-x * x);
  }
  // Enforce exact symmetry.
  for (int i = 0; i < n_points / 2; ++i) {
    const int j = n_points - 1 - i;
    const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    rule.nodes[i] = -x;
    rule.nodes[j] = x;
    for (Vector* w : {&rule.weights, &rule.scaled_weights}) {
      const double avg = 0.5 * ((*w)[i] + (*w)[j]);
      (*w)[i] = (*w)[j] = avg;
    }
  }
  if (n_points % 2 == 1) rule.nodes[n_points / 2] = 0.0;
  return rule;
}

namespace {

const GaussHermiteRule& cached_rule(int n_points) {
  static std::mutex mutex;
  static std::map<int, GaussHermiteRule> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n_points);
  if (it == cache.end()) it = cache.emplace(n_points, gauss_hermite(n_points)).first;
  return it->second;
}

}  // namespace

// ---------------------------------------------------------------------------
// Random-intercept Poisson

detail::GroupedPoisson::GroupedPoisson(const Vector& y_in, const std::vector<int>& group) : y(y_in) {
  const int n_groups = group.empty() ? 0 : *std::max_element(group.begin(), group.end()) + 1;
  members.resize(static_cast<std::size_t>(n_groups));
  for (std::size_t i = 0; i < group.size(); ++i) {
    members[static_cast<std::size_t>(group[i])].push_back(static_cast<Eigen::Index>(i));
  }
  log_factorial.resize(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) log_factorial[i] = std::lgamma(y[i] + 1.0);
}

double detail::GroupedPoisson::marginal_loglik(const Vector& offset, double omega,
                                               const GaussHermiteRule& rule, Vector* modes) const {
  if (modes) modes->setZero(static_cast<Eigen::Index>(members.size()));
  if (omega == 0.0) return poisson_loglik(y, offset);

  const double prec = 1.0 / (omega * omega);
  const double log_norm = -0.5 * (kLog2Pi + 2.0 * std::log(omega));
  double total = 0.0;
  for (std::size_t g = 0; g < members.size(); ++g) {
    // The group's conditional log-likelihood in u is A + u*Y - e^u * E.
    double a = 0.0, ysum = 0.0, esum = 0.0;
    for (auto i : members[g]) {
      a += y[i] * offset[i] - log_factorial[i];
      ysum += y[i];
      esum += std::exp(offset[i]);
    }
    auto h = [&](double u) { return a + u * ysum - std::exp(u) * esum - 0.5 * prec * u * u + log_norm; };

    // Newton for the mode of the concave integrand.
    double u = 0.0;
    for (int step = 0; step < 50; ++step) {
      const double grad = ysum - std::exp(u) * esum - prec * u;
      const double hess = -std::exp(u) * esum - prec;
      double delta = -grad / hess;
      delta = std::clamp(delta, -3.0, 3.0);
      u += delta;
      if (std::abs(delta) < 1e-10) break;
    }
    const double curvature = std::exp(u) * esum + prec;
    const double scale = std::sqrt(2.0 / curvature);
    const double h_mode = h(u);

    double acc = 0.0;
    for (Eigen::Index k = 0; k < rule.nodes.size(); ++k) {
      const double x = rule.nodes[k];
      acc += rule.scaled_weights[k] * std::exp(h(u + scale * x) - h_mode);
    }
    total += h_mode + std::log(scale * acc);
    if (modes) (*modes)[static_cast<Eigen::Index>(g)] = u;
  }
  return total;
}

namespace {

struct GlmmObjective {
  const Dataset& d;
  detail::GroupedPoisson grouped;
  const GaussHermiteRule& rule;

  // theta = (beta, log omega); returns the negative marginal log-likelihood.
  double operator()(const Vector& theta) const {
    const auto p = d.p();
    const Vector offset = d.X * theta.head(p);
    const double value = -grouped.marginal_loglik(offset, std::exp(theta[p]), rule);
    return std::isfinite(value) ? value : std::numeric_limits<double>::infinity();
  }

  Vector gradient(const Vector& theta, double f0) const {
    Vector g(theta.size());
    Vector t = theta;
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(theta[j]));
      t[j] = theta[j] + h;
      const double fp = (*this)(t);
      t[j] = theta[j] - h;
      const double fm = (*this)(t);
      t[j] = theta[j];
      g[j] = (std::isfinite(fp) && std::isfinite(fm)) ? (fp - fm) / (2.0 * h)
                                                      : (std::isfinite(fp) ? (fp - f0) / h : (f0 - fm) / h);
    }
    return g;
  }

  Matrix hessian(const Vector& theta) const {
    const auto dim = theta.size();
    Matrix H(dim, dim);
    Vector t = theta;
    const double f0 = (*this)(theta);
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double hi = 1e-4 * std::max(1.0, std::abs(theta[i]));
      for (Eigen::Index j = i; j < dim; ++j) {
        const double hj = 1e-4 * std::max(1.0, std::abs(theta[j]));
        if (i == j) {
          t[i] = theta[i] + hi;
          const double fp = (*this)(t);
          t[i] = theta[i] - hi;
          const double fm = (*this)(t);
          t[i] = theta[i];
          H(i, i) = (fp - 2.0 * f0 + fm) / (hi * hi);
        } else {
          double f[4];
          const double si[4] = {1, 1, -1, -1};
          const double sj[4] = {1, -1, 1, -1};
          for (int k = 0; k < 4; ++k) {
            t[i] = theta[i] + si[k] * hi;
            t[j] = theta[j] + sj[k] * hj;
            f[k] = (*this)(t);
          }
          t[i] = theta[i];
          t[j] = theta[j];
          H(i, j) = H(j, i) = (f[0] - f[1] - f[2] + f[3]) / (4.0 * hi * hj);
        }
      }
    }
    return H;
  }
};

// Inverse of a symmetric matrix after lifting its eigenvalues to be positive.
Matrix positive_inverse(const Matrix& H) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(H);
  Vector ev = eig.eigenvalues();
  const double top = std::max(ev.cwiseAbs().maxCoeff(), 1e-8);
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = 1.0 / std::max(std::abs(ev[i]), 1e-8 * top);
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

FittedModel fit_glmm_poisson_ri(const Dataset& d, const FitControl& c) {
  if (!d.group) throw Error(ErrorCode::BadGrouping, "random-intercept model needs a grouping column");
  require_counts(d.y);
  if (c.quad_points < 3) throw Error(ErrorCode::InvalidArgument, "quad_points must be at least 3");
  const auto p = d.p();
  const double log_floor = std::log(kOmegaFloor);

  GlmmObjective objective{d, detail::GroupedPoisson(d.y, *d.group), cached_rule(c.quad_points)};

  // The GLM fit supplies fixed-effect starting values.
  Vector beta_glm;
  try {
    beta_glm = fit_glm_poisson(d, c).beta;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Separation) throw;
    beta_glm = Vector::Zero(p);
    beta_glm[0] = std::log(d.y.mean() + 0.1);
  }

  Vector theta(p + 1);
  theta.head(p) = beta_glm;
  double f = std::numeric_limits<double>::infinity();
  for (double omega0 : {0.1, 0.5, 1.0, 2.0}) {
    Vector t = theta;
    t[p] = std::log(omega0);
    const double ft = objective(t);
    if (ft < f) {
      f = ft;
      theta = t;
    }
  }

  // BFGS on (beta, log omega) with a finite-difference Hessian as the
  // initial inverse-curvature estimate and log omega bounded below.
  Matrix Hinv = positive_inverse(objective.hessian(theta));
  Vector g = objective.gradient(theta, f);
  bool converged = false;
  int iter = 0;
  for (; iter < c.max_iter; ++iter) {
    Vector dir = -Hinv * g;
    if (dir.dot(g) >= 0.0) {
      Hinv = Matrix::Identity(p + 1, p + 1);
      dir = -g;
    }
    const double max_step = dir.cwiseAbs().maxCoeff();
    if (max_step > 5.0) dir *= 5.0 / max_step;

    double step = 1.0;
    Vector theta_new;
    double f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      theta_new = theta + step * dir;
      theta_new[p] = std::max(theta_new[p], log_floor);
      f_new = objective(theta_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * g.dot(dir)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (g.cwiseAbs().maxCoeff() < 1e-3 * (1.0 + std::abs(f))) {
        converged = true;
        break;
      }
      throw Error(ErrorCode::NonConvergence, "line search failed in random-intercept fit");
    }

    const Vector g_new = objective.gradient(theta_new, f_new);
    const Vector s = theta_new - theta;
    const Vector yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const double rho = 1.0 / sy;
      const Matrix I = Matrix::Identity(p + 1, p + 1);
      Hinv = (I - rho * s * yv.transpose()) * Hinv * (I - rho * yv * s.transpose()) + rho * s * s.transpose();
    }
    const double change = std::abs(f - f_new) / (std::abs(f_new) + c.tol);
    theta = theta_new;
    f = f_new;
    g = g_new;
    Vector g_free = g;
    if (theta[p] <= log_floor && g[p] > 0.0) g_free[p] = 0.0;
    if (change < c.tol && g_free.cwiseAbs().maxCoeff() < 1e-4) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw Error(ErrorCode::NonConvergence,
                "random-intercept fit did not converge in " + std::to_string(c.max_iter) + " iterations");
  }

  // The likelihood is flat in log omega near zero, so compare against the
  // boundary explicitly.
  bool boundary = theta[p] <= log_floor + 1e-12;
  if (!boundary && std::exp(theta[p]) < 0.05) {
    Vector t(p + 1);
    t.head(p) = beta_glm;
    t[p] = log_floor;
    const double fb = objective(t);
    if (fb <= f + 1e-9 * (1.0 + std::abs(f))) {
      theta = t;
      f = fb;
      boundary = true;
    }
  }

  FittedModel m;
  m.kind = ModelKind::GlmmPoissonRi;
  m.data = share(d);
  m.beta = theta.head(p);
  m.omega = std::exp(theta[p]);
  m.eta = d.X * m.beta;
  m.quad_points = c.quad_points;
  m.loglik = objective.grouped.marginal_loglik(m.eta, m.omega, objective.rule, &m.ranef);
  m.boundary_omega = boundary;
  m.iterations = iter + 1;
  return m;
}

// ---------------------------------------------------------------------------
// Shared entry points

FittedModel fit_model(ModelKind kind, const Dataset& d, const FitControl& c) {
  switch (kind) {
    case ModelKind::Lm: return fit_lm(d);
    case ModelKind::GlmPoisson: return fit_glm_poisson(d, c);
    case ModelKind::GlmmPoissonRi: return fit_glmm_poisson_ri(d, c);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown model kind");
}

FittedModel refit(const FittedModel& m, const Vector& y_new, const FitControl& c) {
  Dataset d = m.dataset();
  if (y_new.size() != d.n()) throw Error(ErrorCode::InvalidArgument, "refit response has wrong length");
  d.y = y_new;
  FitControl control = c;
  control.quad_points = m.quad_points;
  return fit_model(m.kind, d, control);
}

Vector simulate_response(const FittedModel& m, RandomStream& stream) {
  const Vector eta = linear_predictors(m);
  const auto n = eta.size();
  Vector y(n);
  switch (m.kind) {
    case ModelKind::Lm: {
      std::normal_distribution<double> z(0.0, 1.0);
      for (Eigen::Index i = 0; i < n; ++i) y[i] = eta[i] + m.sigma * z(stream);
      break;
    }
    case ModelKind::GlmPoisson:
    case ModelKind::GlmmPoissonRi: {
      Vector shift = Vector::Zero(n);
      if (m.kind == ModelKind::GlmmPoissonRi && m.omega > 0.0) {
        const auto& group = *m.dataset().group;
        std::normal_distribution<double> z(0.0, 1.0);
        Vector intercepts(m.dataset().n_groups());
        for (Eigen::Index g = 0; g < intercepts.size(); ++g) intercepts[g] = m.omega * z(stream);
        for (Eigen::Index i = 0; i < n; ++i) shift[i] = intercepts[group[static_cast<std::size_t>(i)]];
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = std::exp(eta[i] + shift[i]);
        if (mean <= 0.0) {
          y[i] = 0.0;
          continue;
        }
        std::poisson_distribution<long long> draw(mean);
        y[i] = static_cast<double>(draw(stream));
      }
      break;
    }
  }
  return y;
}

double log_likelihood(const FittedModel& m, const Vector& y) {
  const Vector eta = linear_predictors(m);
  if (y.size() != eta.size()) throw Error(ErrorCode::InvalidArgument, "response has wrong length");
  switch (m.kind) {
    case ModelKind::Lm: {
      const double rss = (y - eta).squaredNorm();
      if (m.sigma_ml == 0.0) {
        return rss == 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      }
      const double n = static_cast<double>(y.size());
      return -0.5 * n * (kLog2Pi + 2.0 * std::log(m.sigma_ml)) - 0.5 * rss / (m.sigma_ml * m.sigma_ml);
    }
    case ModelKind::GlmPoisson: return poisson_loglik(y, eta);
    case ModelKind::GlmmPoissonRi: {
      detail::GroupedPoisson grouped(y, *m.dataset().group);
      return grouped.marginal_loglik(eta, m.omega, cached_rule(m.quad_points));
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace envdiag
