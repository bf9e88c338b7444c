#include "cwr/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cwr/errors.hpp"

namespace cwr {

namespace {

struct Standardization {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};

Standardization standardize_stats(const ClusterDataset& ds) {
  const std::size_t p = ds.covariate_dim();
  const double n = static_cast<double>(ds.total_subjects());
  Standardization st;
  st.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  st.sd = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  for (const Cluster& c : ds.clusters()) {
    for (const SubjectRecord& s : c.subjects) {
      for (std::size_t l = 0; l < p; ++l) {
        st.mean[static_cast<Eigen::Index>(l)] += s.covariates[l];
      }
    }
  }
  st.mean /= n;
  for (const Cluster& c : ds.clusters()) {
    for (const SubjectRecord& s : c.subjects) {
      for (std::size_t l = 0; l < p; ++l) {
        const double dx = s.covariates[l] - st.mean[static_cast<Eigen::Index>(l)];
        st.sd[static_cast<Eigen::Index>(l)] += dx * dx;
      }
    }
  }
  for (std::size_t l = 0; l < p; ++l) {
    st.sd[static_cast<Eigen::Index>(l)] =
        std::sqrt(st.sd[static_cast<Eigen::Index>(l)] / n);
    if (st.sd[static_cast<Eigen::Index>(l)] < 1e-12) {
      throw SolverError("singular Jacobian: covariate x" + std::to_string(l + 1) +
                        " is constant, its balance constraint is degenerate");
    }
  }
  return st;
}

// One arm's per-cluster data on the standardized covariate scale.
struct ArmBlocks {
  std::vector<std::vector<double>> d;             // initial weights
  std::vector<std::vector<Eigen::VectorXd>> x;    // standardized covariates
  std::vector<double> n_i;
};

ArmBlocks collect_arm(const ClusterDataset& ds, const WeightSet& d, int arm,
                      const Standardization& st) {
  ArmBlocks blocks;
  const std::size_t m = ds.cluster_count();
  blocks.d.resize(m);
  blocks.x.resize(m);
  blocks.n_i.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Cluster& c = ds.clusters()[i];
    blocks.n_i[i] = static_cast<double>(c.subjects.size());
    const std::size_t base = ds.subject_offset(i);
    for (std::size_t j = 0; j < c.subjects.size(); ++j) {
      const SubjectRecord& s = c.subjects[j];
      if (s.treatment != arm) continue;
      blocks.d[i].push_back(d.weights[base + j]);
      Eigen::VectorXd xs(static_cast<Eigen::Index>(s.covariates.size()));
      for (std::size_t l = 0; l < s.covariates.size(); ++l) {
        xs[static_cast<Eigen::Index>(l)] =
            (s.covariates[l] - st.mean[static_cast<Eigen::Index>(l)]) /
            st.sd[static_cast<Eigen::Index>(l)];
      }
      blocks.x[i].push_back(std::move(xs));
    }
    if (blocks.d[i].empty()) {
      throw ValidationError("cluster " + c.id + " has no subjects in arm " +
                            std::to_string(arm) +
                            "; filter single-arm clusters before calibrating");
    }
  }
  return blocks;
}

struct ArmSolve {
  Eigen::VectorXd lambda;
  int iterations = 0;
  double residual = 0.0;
};

// Balance function for one arm: F(lambda) = (1/n) sum_i n_i * wmean_i(x~) with
// weights d exp(-lambda'x~); the target is 0 because x~ is centered on the
// overall mean and the cluster constraints pin each arm's total to n_i.
ArmSolve solve_arm(const ArmBlocks& blocks, std::size_t p, double total_n,
                   double tol, int max_iter) {
  ArmSolve out;
  out.lambda = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  if (p == 0) return out;

  const std::size_t m = blocks.d.size();
  Eigen::VectorXd f(static_cast<Eigen::Index>(p));
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));

  auto evaluate = [&](const Eigen::VectorXd& lambda, Eigen::VectorXd& f_out,
                      Eigen::MatrixXd* jac_out) {
    f_out.setZero();
    if (jac_out) jac_out->setZero();
    for (std::size_t i = 0; i < m; ++i) {
      double sum_w = 0.0;
      Eigen::VectorXd sum_wx = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
      Eigen::MatrixXd sum_wxx;
      if (jac_out) {
        sum_wxx = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p),
                                        static_cast<Eigen::Index>(p));
      }
      for (std::size_t j = 0; j < blocks.d[i].size(); ++j) {
        const double expo = std::clamp(-lambda.dot(blocks.x[i][j]), -500.0, 500.0);
        const double w = blocks.d[i][j] * std::exp(expo);
        sum_w += w;
        sum_wx += w * blocks.x[i][j];
        if (jac_out) {
          sum_wxx.noalias() += w * blocks.x[i][j] * blocks.x[i][j].transpose();
        }
      }
      const Eigen::VectorXd mean_x = sum_wx / sum_w;
      f_out += blocks.n_i[i] * mean_x;
      if (jac_out) {
        jac_out->noalias() +=
            blocks.n_i[i] * (mean_x * mean_x.transpose() - sum_wxx / sum_w);
      }
    }
    f_out /= total_n;
    if (jac_out) *jac_out /= total_n;
  };

  evaluate(out.lambda, f, nullptr);
  double res = f.cwiseAbs().maxCoeff();
  for (out.iterations = 0; out.iterations < max_iter && res > tol; ++out.iterations) {
    evaluate(out.lambda, f, &jac);
    Eigen::MatrixXd neg_jac = -jac;  // positive semidefinite
    Eigen::LDLT<Eigen::MatrixXd> ldlt(neg_jac);
    if (ldlt.info() != Eigen::Success ||
        ldlt.vectorD().minCoeff() < 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
      throw SolverError("singular Jacobian in the calibration balance solve");
    }
    const Eigen::VectorXd delta = ldlt.solve(f);

    double step = 1.0;
    Eigen::VectorXd trial;
    Eigen::VectorXd f_trial(static_cast<Eigen::Index>(p));
    double res_trial = res;
    for (int h = 0; h <= 30; ++h) {
      trial = out.lambda + step * delta;
      evaluate(trial, f_trial, nullptr);
      res_trial = f_trial.cwiseAbs().maxCoeff();
      if (res_trial <= res * (1.0 + 1e-12)) break;
      step *= 0.5;
    }
    out.lambda = trial;
    res = res_trial;
  }
  out.residual = res;
  if (res > tol) {
    throw SolverError("calibration failed to converge after " +
                      std::to_string(max_iter) + " Newton iterations; last max "
                      "standardized residual = " + std::to_string(res));
  }
  return out;
}

}  // namespace

double BalanceResiduals::max_abs() const {
  double v = 0.0;
  auto upd = [&](const Eigen::VectorXd& r) {
    if (r.size() > 0) v = std::max(v, r.cwiseAbs().maxCoeff());
  };
  upd(treated_covariate);
  upd(control_covariate);
  upd(treated_cluster);
  upd(control_cluster);
  return v;
}

CalibrationSolution solve_calibration(const WeightSet& d, const ClusterDataset& ds,
                                      double tol, int max_iter) {
  validate_weights(d, ds);
  const std::size_t p = ds.covariate_dim();
  const double n = static_cast<double>(ds.total_subjects());

  Standardization st;
  if (p > 0) {
    st = standardize_stats(ds);
  }

  const ArmBlocks treated = collect_arm(ds, d, 1, st);
  const ArmBlocks control = collect_arm(ds, d, 0, st);

  const ArmSolve sol1 = solve_arm(treated, p, n, tol, max_iter);
  const ArmSolve sol2 = solve_arm(control, p, n, tol, max_iter);

  // Closed-form weights from the solved multipliers; each cluster-arm is
  // normalized so its weights sum to exactly n_i.
  CalibrationSolution out;
  out.weights.backend = WeightBackend::calibration;
  out.weights.weights.assign(ds.total_subjects(), 0.0);
  for (std::size_t i = 0; i < ds.cluster_count(); ++i) {
    const Cluster& c = ds.clusters()[i];
    const std::size_t base = ds.subject_offset(i);
    const double n_i = static_cast<double>(c.subjects.size());
    for (int arm = 0; arm <= 1; ++arm) {
      const Eigen::VectorXd& lambda = (arm == 1) ? sol1.lambda : sol2.lambda;
      double denom = 0.0;
      std::vector<double> tilts(c.subjects.size(), 0.0);
      for (std::size_t j = 0; j < c.subjects.size(); ++j) {
        const SubjectRecord& s = c.subjects[j];
        if (s.treatment != arm) continue;
        double expo = 0.0;
        for (std::size_t l = 0; l < p; ++l) {
          const double xs = (s.covariates[l] - st.mean[static_cast<Eigen::Index>(l)]) /
                            st.sd[static_cast<Eigen::Index>(l)];
          expo -= lambda[static_cast<Eigen::Index>(l)] * xs;
        }
        tilts[j] = d.weights[base + j] * std::exp(std::clamp(expo, -500.0, 500.0));
        denom += tilts[j];
      }
      for (std::size_t j = 0; j < c.subjects.size(); ++j) {
        if (c.subjects[j].treatment != arm) continue;
        out.weights.weights[base + j] = n_i * tilts[j] / denom;
      }
    }
  }

  // Report multipliers on the raw covariate scale.
  out.lambda1 = sol1.lambda;
  out.lambda2 = sol2.lambda;
  for (std::size_t l = 0; l < p; ++l) {
    out.lambda1[static_cast<Eigen::Index>(l)] /= st.sd[static_cast<Eigen::Index>(l)];
    out.lambda2[static_cast<Eigen::Index>(l)] /= st.sd[static_cast<Eigen::Index>(l)];
  }
  out.iterations = sol1.iterations + sol2.iterations;
  out.constraint_residual = evaluate_balance_constraints(out.weights, ds).max_abs();
  out.weights.diagnostics.iterations = out.iterations;
  out.weights.diagnostics.max_constraint_residual = out.constraint_residual;
  out.weights.diagnostics.converged = true;
  return out;
}

BalanceResiduals evaluate_balance_constraints(const WeightSet& w,
                                              const ClusterDataset& ds) {
  validate_weights(w, ds);
  const std::size_t p = ds.covariate_dim();
  const std::size_t m = ds.cluster_count();
  const double n = static_cast<double>(ds.total_subjects());

  Standardization st;
  if (p > 0) st = standardize_stats(ds);

  BalanceResiduals r;
  r.treated_covariate = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  r.control_covariate = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  r.treated_cluster = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  r.control_cluster = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));

  Eigen::VectorXd target = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  for (const Cluster& c : ds.clusters()) {
    for (const SubjectRecord& s : c.subjects) {
      for (std::size_t l = 0; l < p; ++l) {
        target[static_cast<Eigen::Index>(l)] += s.covariates[l];
      }
    }
  }

  for (std::size_t i = 0; i < m; ++i) {
    const Cluster& c = ds.clusters()[i];
    const std::size_t base = ds.subject_offset(i);
    const double n_i = static_cast<double>(c.subjects.size());
    double treated_total = 0.0, control_total = 0.0;
    for (std::size_t j = 0; j < c.subjects.size(); ++j) {
      const SubjectRecord& s = c.subjects[j];
      const double wj = w.weights[base + j];
      if (s.treatment == 1) {
        treated_total += wj;
        for (std::size_t l = 0; l < p; ++l) {
          r.treated_covariate[static_cast<Eigen::Index>(l)] += wj * s.covariates[l];
        }
      } else {
        control_total += wj;
        for (std::size_t l = 0; l < p; ++l) {
          r.control_covariate[static_cast<Eigen::Index>(l)] += wj * s.covariates[l];
        }
      }
    }
    r.treated_cluster[static_cast<Eigen::Index>(i)] = (treated_total - n_i) / n_i;
    r.control_cluster[static_cast<Eigen::Index>(i)] = (control_total - n_i) / n_i;
  }

  // Covariate residuals in per-subject standardized units: the raw constraint
  // (sum_arm w x_l) - (sum x_l), divided by n * sd_l.
  for (std::size_t l = 0; l < p; ++l) {
    const auto li = static_cast<Eigen::Index>(l);
    r.treated_covariate[li] = (r.treated_covariate[li] - target[li]) / (n * st.sd[li]);
    r.control_covariate[li] = (r.control_covariate[li] - target[li]) / (n * st.sd[li]);
  }
  return r;
}

double kl_objective(const WeightSet& w, const WeightSet& d) {
  if (w.weights.size() != d.weights.size()) {
    throw ValidationError("weight sets differ in length");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < w.weights.size(); ++k) {
    const double wk = w.weights[k];
    const double dk = d.weights[k];
    if (!(wk > 0.0) || !(dk > 0.0)) {
      throw ValidationError("kl_objective requires strictly positive weights");
    }
    acc += wk * std::log(wk / dk);
  }
  return acc;
}

}  // namespace cwr
