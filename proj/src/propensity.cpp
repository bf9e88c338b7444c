#include "cwr/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cwr/errors.hpp"

namespace cwr {

namespace {

constexpr double kScoreTol = 1e-8;
constexpr int kMaxIrlsIter = 100;
constexpr double kSeparationTol = 1e-10;

double inv_link(Link link, double eta) {
  switch (link) {
    case Link::logit:
      return 1.0 / (1.0 + std::exp(-eta));
    case Link::cloglog: {
      const double t = std::exp(std::min(eta, 700.0));
      return -std::expm1(-t);
    }
  }
  return 0.5;
}

// dmu/deta
double link_slope(Link link, double eta, double mu) {
  switch (link) {
    case Link::logit:
      return mu * (1.0 - mu);
    case Link::cloglog:
      return std::exp(std::min(eta, 700.0) - std::exp(std::min(eta, 700.0)));
  }
  return 0.0;
}

double bernoulli_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
  double ll = 0.0;
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    const double m = std::clamp(mu[k], 1e-12, 1.0 - 1e-12);
    ll += y[k] * std::log(m) + (1.0 - y[k]) * std::log1p(-m);
  }
  return ll;
}

struct Flattened {
  Eigen::MatrixXd design;          // intercept + covariates (+ cluster dummies)
  Eigen::VectorXd y;               // treatment indicators
  std::vector<std::size_t> cluster_of;  // subject -> cluster index
};

Flattened flatten(const ClusterDataset& ds, bool cluster_dummies) {
  const std::size_t n = ds.total_subjects();
  const std::size_t p = ds.covariate_dim();
  const std::size_t m = ds.cluster_count();
  const std::size_t q = 1 + p + (cluster_dummies ? m - 1 : 0);

  Flattened f;
  f.design = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                                   static_cast<Eigen::Index>(q));
  f.y.resize(static_cast<Eigen::Index>(n));
  f.cluster_of.resize(n);

  std::size_t row = 0;
  for (std::size_t i = 0; i < ds.cluster_count(); ++i) {
    for (const SubjectRecord& s : ds.clusters()[i].subjects) {
      f.design(row, 0) = 1.0;
      for (std::size_t l = 0; l < p; ++l) {
        f.design(row, 1 + l) = s.covariates[l];
      }
      if (cluster_dummies && i > 0) {
        f.design(row, 1 + p + i - 1) = 1.0;
      }
      f.y[static_cast<Eigen::Index>(row)] = static_cast<double>(s.treatment);
      f.cluster_of[row] = i;
      ++row;
    }
  }
  return f;
}

struct IrlsResult {
  Eigen::VectorXd beta;
  Eigen::VectorXd mu;
  Eigen::VectorXd eta;
  bool converged = false;
  int iterations = 0;
  double max_gradient = 0.0;
};

// Fisher-scoring IRLS with step-halving on likelihood decreases. `offset` is
// added to the linear predictor and not estimated.
IrlsResult irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Link link,
                const Eigen::VectorXd& offset, const Eigen::VectorXd& start) {
  const Eigen::Index n = X.rows();
  const Eigen::Index q = X.cols();

  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < q) {
      throw SolverError("singular design: design matrix is rank deficient (rank " +
                        std::to_string(qr.rank()) + " of " + std::to_string(q) + ")");
    }
  }

  IrlsResult r;
  r.beta = start;
  r.eta = X * r.beta + offset;
  r.mu.resize(n);
  Eigen::VectorXd score_resid(n), w(n);

  auto refresh = [&](const Eigen::VectorXd& beta) {
    r.eta = X * beta + offset;
    for (Eigen::Index k = 0; k < n; ++k) {
      r.mu[k] = inv_link(link, r.eta[k]);
    }
  };

  refresh(r.beta);
  double ll = bernoulli_loglik(y, r.mu);

  for (r.iterations = 1; r.iterations <= kMaxIrlsIter; ++r.iterations) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const double mu = std::clamp(r.mu[k], 1e-12, 1.0 - 1e-12);
      const double v = mu * (1.0 - mu);
      const double g = link_slope(link, r.eta[k], mu);
      score_resid[k] = (y[k] - r.mu[k]) * g / v;
      w[k] = g * g / v;
    }
    const Eigen::VectorXd score = X.transpose() * score_resid;
    r.max_gradient = score.cwiseAbs().maxCoeff();
    if (r.max_gradient < kScoreTol) {
      r.converged = true;
      break;
    }

    const Eigen::MatrixXd info =
        X.transpose() * w.asDiagonal() * X;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) {
      throw SolverError("singular design: information matrix factorization failed");
    }
    Eigen::VectorXd delta = ldlt.solve(score);

    double step = 1.0;
    Eigen::VectorXd candidate;
    double candidate_ll = -std::numeric_limits<double>::infinity();
    for (int h = 0; h < 30; ++h) {
      candidate = r.beta + step * delta;
      refresh(candidate);
      candidate_ll = bernoulli_loglik(y, r.mu);
      if (candidate_ll >= ll - 1e-12) break;
      step *= 0.5;
    }
    r.beta = candidate;
    ll = candidate_ll;
  }
  refresh(r.beta);
  return r;
}

void throw_on_separation(const Eigen::VectorXd& mu, const Flattened& f,
                         const ClusterDataset& ds, bool name_cluster) {
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    if (mu[k] < kSeparationTol || mu[k] > 1.0 - kSeparationTol) {
      std::string msg = "separation: fitted probability for subject " +
                        std::to_string(k + 1) + " is numerically 0 or 1";
      if (name_cluster) {
        msg += " (cluster " +
               ds.clusters()[f.cluster_of[static_cast<std::size_t>(k)]].id + ")";
      }
      throw SolverError(msg);
    }
  }
}

}  // namespace

const char* to_string(Link link) {
  return link == Link::logit ? "logit" : "cloglog";
}

Link link_from_string(const std::string& name) {
  if (name == "logit") return Link::logit;
  if (name == "cloglog") return Link::cloglog;
  throw ValidationError("unknown link '" + name + "' (expected logit or cloglog)");
}

double PsModelFit::cluster_offset(const std::string& cluster_id) const {
  if (backend == PsBackend::pooled) return 0.0;
  for (std::size_t i = 0; i < cluster_ids.size(); ++i) {
    if (cluster_ids[i] == cluster_id) {
      return cluster_offsets[static_cast<Eigen::Index>(i)];
    }
  }
  throw ValidationError("unknown cluster '" + cluster_id +
                        "' for a cluster-aware propensity model");
}

PsModelFit fit_logistic(const ClusterDataset& ds, Link link) {
  if (ds.total_subjects() == 0) {
    throw ValidationError("cannot fit a propensity model on an empty dataset");
  }
  Flattened f = flatten(ds, false);
  const Eigen::VectorXd offset = Eigen::VectorXd::Zero(f.y.size());
  const Eigen::VectorXd start = Eigen::VectorXd::Zero(f.design.cols());
  IrlsResult r = irls(f.design, f.y, link, offset, start);
  throw_on_separation(r.mu, f, ds, false);

  PsModelFit fit;
  fit.link = link;
  fit.backend = PsBackend::pooled;
  fit.beta = r.beta;
  fit.converged = r.converged;
  fit.iterations = r.iterations;
  fit.max_gradient = r.max_gradient;
  return fit;
}

PsModelFit fit_fixed_effects(const ClusterDataset& ds, Link link) {
  const std::size_t m = ds.cluster_count();
  if (m == 0) {
    throw ValidationError("cannot fit a propensity model on an empty dataset");
  }
  Flattened f = flatten(ds, true);
  const Eigen::VectorXd offset = Eigen::VectorXd::Zero(f.y.size());
  const Eigen::VectorXd start = Eigen::VectorXd::Zero(f.design.cols());
  IrlsResult r = irls(f.design, f.y, link, offset, start);
  throw_on_separation(r.mu, f, ds, true);

  const std::size_t p = ds.covariate_dim();
  PsModelFit fit;
  fit.link = link;
  fit.backend = PsBackend::fixed_effects;
  fit.beta = r.beta.head(static_cast<Eigen::Index>(1 + p));
  fit.cluster_offsets = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  for (std::size_t i = 1; i < m; ++i) {
    fit.cluster_offsets[static_cast<Eigen::Index>(i)] =
        r.beta[static_cast<Eigen::Index>(p + i)];
  }
  fit.cluster_ids.reserve(m);
  for (const Cluster& c : ds.clusters()) {
    fit.cluster_ids.push_back(c.id);
  }
  fit.converged = r.converged;
  fit.iterations = r.iterations;
  fit.max_gradient = r.max_gradient;
  return fit;
}

PsModelFit fit_random_intercept(const ClusterDataset& ds, Link link) {
  const std::size_t m = ds.cluster_count();
  if (m < 2) {
    throw ValidationError("random-intercept model requires at least 2 clusters");
  }
  constexpr double kOuterTol = 1e-6;
  constexpr int kMaxOuter = 200;
  constexpr double kModeTol = 1e-8;
  // Below this the intercepts move the weights by less than ~0.1% and the EM
  // variance iteration only creeps further down, so treat it as a collapse.
  constexpr double kVarianceFloor = 1e-4;

  Flattened f = flatten(ds, false);
  const Eigen::Index n = f.design.rows();

  // Warm start at the pooled fit.
  Eigen::VectorXd beta;
  {
    const Eigen::VectorXd zero_offset = Eigen::VectorXd::Zero(n);
    beta = irls(f.design, f.y, link, zero_offset,
                Eigen::VectorXd::Zero(f.design.cols()))
               .beta;
  }

  double sigma2 = 1.0;
  Eigen::VectorXd modes = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  Eigen::VectorXd eta_fixed = f.design * beta;
  Eigen::VectorXd mode_info = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));

  auto solve_modes = [&]() {
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t lo = ds.subject_offset(i);
      const std::size_t hi = lo + ds.clusters()[i].subjects.size();
      double b = modes[static_cast<Eigen::Index>(i)];
      double info = 1.0 / sigma2;
      for (int it = 0; it < 60; ++it) {
        double score = -b / sigma2;
        info = 1.0 / sigma2;
        for (std::size_t k = lo; k < hi; ++k) {
          const double eta = eta_fixed[static_cast<Eigen::Index>(k)] + b;
          const double mu = std::clamp(inv_link(link, eta), 1e-12, 1.0 - 1e-12);
          const double v = mu * (1.0 - mu);
          const double g = link_slope(link, eta, mu);
          score += (f.y[static_cast<Eigen::Index>(k)] - mu) * g / v;
          info += g * g / v;
        }
        const double step = score / info;
        b += step;
        if (std::abs(score) < kModeTol || std::abs(step) < 1e-14) break;
      }
      modes[static_cast<Eigen::Index>(i)] = b;
      mode_info[static_cast<Eigen::Index>(i)] = info - 1.0 / sigma2;
    }
  };

  bool outer_converged = false;
  int outer = 0;
  for (outer = 1; outer <= kMaxOuter; ++outer) {
    const Eigen::VectorXd beta_old = beta;
    const double sigma2_old = sigma2;
    const Eigen::VectorXd modes_old = modes;

    solve_modes();

    // One IRLS step for the fixed coefficients with the modes as offsets.
    Eigen::VectorXd offset(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      offset[k] = modes[static_cast<Eigen::Index>(f.cluster_of[static_cast<std::size_t>(k)])];
    }
    {
      Eigen::VectorXd slope_resid(n), w(n);
      const Eigen::VectorXd eta = f.design * beta + offset;
      for (Eigen::Index k = 0; k < n; ++k) {
        const double mu = std::clamp(inv_link(link, eta[k]), 1e-12, 1.0 - 1e-12);
        const double v = mu * (1.0 - mu);
        const double g = link_slope(link, eta[k], mu);
        slope_resid[k] = (f.y[k] - mu) * g / v;
        w[k] = g * g / v;
      }
      const Eigen::MatrixXd info = f.design.transpose() * w.asDiagonal() * f.design;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
      if (ldlt.info() != Eigen::Success) {
        throw SolverError("random-intercept fit: singular information matrix");
      }
      beta += ldlt.solve(f.design.transpose() * slope_resid);
      eta_fixed = f.design * beta;
    }

    // Laplace-posterior EM update of the variance; the posterior for cluster
    // i is approximately N(mode_i, 1/(H_i + 1/sigma2)).
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double post_var =
          1.0 / (mode_info[static_cast<Eigen::Index>(i)] + 1.0 / sigma2);
      const double b = modes[static_cast<Eigen::Index>(i)];
      acc += b * b + post_var;
    }
    sigma2 = acc / static_cast<double>(m);

    // EM decays only harmonically toward a boundary optimum. Once the
    // variance is small, test the boundary directly: the derivative of the
    // Laplace likelihood at sigma2 -> 0 has the sign of
    // sum_i (score_i(0)^2 - info_i(0)); nonpositive means the maximum is at 0.
    bool collapse = sigma2 < kVarianceFloor && sigma2 < sigma2_old;
    if (!collapse && sigma2 < 0.1 && sigma2 < sigma2_old) {
      double boundary = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t lo = ds.subject_offset(i);
        const std::size_t hi = lo + ds.clusters()[i].subjects.size();
        double s0 = 0.0, h0 = 0.0;
        for (std::size_t k = lo; k < hi; ++k) {
          const double eta = eta_fixed[static_cast<Eigen::Index>(k)];
          const double mu = std::clamp(inv_link(link, eta), 1e-12, 1.0 - 1e-12);
          const double v = mu * (1.0 - mu);
          const double g = link_slope(link, eta, mu);
          s0 += (f.y[static_cast<Eigen::Index>(k)] - mu) * g / v;
          h0 += g * g / v;
        }
        boundary += s0 * s0 - h0;
      }
      collapse = boundary <= 0.0;
    }
    if (collapse) {
      PsModelFit fit = fit_logistic(ds, link);
      fit.backend = PsBackend::random_intercept;
      fit.cluster_ids.reserve(m);
      for (const Cluster& c : ds.clusters()) fit.cluster_ids.push_back(c.id);
      fit.cluster_offsets = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
      fit.random_variance = 0.0;
      fit.degenerate_variance = true;
      fit.iterations = outer;
      return fit;
    }

    const double change =
        std::max({(beta - beta_old).cwiseAbs().maxCoeff(),
                  std::abs(sigma2 - sigma2_old),
                  (modes - modes_old).cwiseAbs().maxCoeff()});
    if (change < kOuterTol) {
      outer_converged = true;
      break;
    }
  }
  if (!outer_converged) {
    throw SolverError("random-intercept fit did not converge within 200 outer "
                      "iterations");
  }
  solve_modes();

  PsModelFit fit;
  fit.link = link;
  fit.backend = PsBackend::random_intercept;
  fit.beta = beta;
  fit.cluster_offsets = modes;
  fit.cluster_ids.reserve(m);
  for (const Cluster& c : ds.clusters()) fit.cluster_ids.push_back(c.id);
  fit.random_variance = sigma2;
  fit.converged = true;
  fit.iterations = outer;
  fit.max_gradient = 0.0;
  return fit;
}

double predict_ps(const PsModelFit& fit, const SubjectRecord& subject) {
  const std::size_t p = subject.covariates.size();
  if (fit.beta.size() != static_cast<Eigen::Index>(p + 1)) {
    throw ValidationError("covariate length " + std::to_string(p) +
                          " does not match the fitted model (" +
                          std::to_string(fit.beta.size() - 1) + " covariates)");
  }
  double eta = fit.beta[0];
  for (std::size_t l = 0; l < p; ++l) {
    eta += fit.beta[static_cast<Eigen::Index>(1 + l)] * subject.covariates[l];
  }
  eta += fit.cluster_offset(subject.cluster_id);
  const double mu = inv_link(fit.link, eta);
  return std::clamp(mu, 1e-15, 1.0 - 1e-15);
}

WeightSet initial_weights(const PsModelFit& fit, const ClusterDataset& ds,
                          double epsilon) {
  WeightSet w;
  w.weights.reserve(ds.total_subjects());
  switch (fit.backend) {
    case PsBackend::pooled: w.backend = WeightBackend::logistic; break;
    case PsBackend::fixed_effects: w.backend = WeightBackend::fixed_effects; break;
    case PsBackend::random_intercept: w.backend = WeightBackend::random_effects; break;
  }
  std::string offenders;
  int offender_count = 0;
  std::size_t index = 0;
  for (const Cluster& c : ds.clusters()) {
    for (const SubjectRecord& s : c.subjects) {
      ++index;
      const double pi = predict_ps(fit, s);
      if (pi <= epsilon || pi >= 1.0 - epsilon) {
        ++offender_count;
        if (offender_count <= 5) {
          offenders += (offenders.empty() ? "" : ", ") + std::to_string(index);
        }
      }
      w.weights.push_back(s.treatment == 1 ? 1.0 / pi : 1.0 / (1.0 - pi));
    }
  }
  if (offender_count > 0) {
    throw ValidationError(
        "extreme propensity: " + std::to_string(offender_count) +
        " subject(s) with fitted probability outside (" + std::to_string(epsilon) +
        ", 1-" + std::to_string(epsilon) + "); first subjects: " + offenders);
  }
  w.diagnostics.iterations = fit.iterations;
  w.diagnostics.converged = fit.converged;
  w.diagnostics.max_constraint_residual = 0.0;
  return w;
}

}  // namespace cwr
