#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "cwr/propensity.hpp"
#include "cwr/rng.hpp"
#include "helpers.hpp"

using namespace cwr;

namespace {

// Dataset with no covariates: `treated` of `total` subjects treated, one cluster.
ClusterDataset intercept_only(int treated, int total) {
  std::vector<SubjectRecord> subjects;
  for (int k = 0; k < total; ++k) {
    SubjectRecord s;
    s.cluster_id = "c1";
    s.treatment = k < treated ? 1 : 0;
    s.outcome = {1.0, 1, 2.0, 1};
    subjects.push_back(std::move(s));
  }
  return ClusterDataset::from_subjects(std::move(subjects));
}

double logit(double p) { return std::log(p / (1.0 - p)); }

// Brute-force likelihood maximizer: coarse-to-fine grid over all
// coefficients. Independent of the IRLS path; feasible for q <= 3.
Eigen::VectorXd grid_mle(const ClusterDataset& ds, Link link) {
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> y;
  for (const Cluster& c : ds.clusters()) {
    for (const SubjectRecord& s : c.subjects) {
      Eigen::VectorXd r(1 + s.covariates.size());
      r[0] = 1.0;
      for (std::size_t l = 0; l < s.covariates.size(); ++l) r[1 + l] = s.covariates[l];
      rows.push_back(r);
      y.push_back(s.treatment);
    }
  }
  const int q = static_cast<int>(rows[0].size());

  auto loglik = [&](const Eigen::VectorXd& beta) {
    double ll = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const double eta = rows[k].dot(beta);
      double mu = link == Link::logit ? 1.0 / (1.0 + std::exp(-eta))
                                      : -std::expm1(-std::exp(eta));
      mu = std::min(std::max(mu, 1e-12), 1.0 - 1e-12);
      ll += y[k] * std::log(mu) + (1.0 - y[k]) * std::log1p(-mu);
    }
    return ll;
  };

  Eigen::VectorXd center = Eigen::VectorXd::Zero(q);
  double radius = 3.0;
  const int steps = 10;  // 21 points per axis
  for (int stage = 0; stage < 16; ++stage) {
    Eigen::VectorXd best = center;
    double best_ll = loglik(center);
    std::vector<int> idx(q, -steps);
    for (;;) {
      Eigen::VectorXd candidate(q);
      for (int d = 0; d < q; ++d) {
        candidate[d] = center[d] + radius * idx[d] / steps;
      }
      const double ll = loglik(candidate);
      if (ll > best_ll) {
        best_ll = ll;
        best = candidate;
      }
      int d = 0;
      while (d < q && ++idx[d] > steps) {
        idx[d] = -steps;
        ++d;
      }
      if (d == q) break;
    }
    center = best;
    radius *= 0.45;
  }
  return center;
}

}  // namespace

TEST_CASE("intercept-only logit closed forms") {
  const PsModelFit half = fit_logistic(intercept_only(10, 20), Link::logit);
  CHECK(half.converged);
  CHECK(std::abs(half.beta[0]) < 1e-9);

  const PsModelFit thirty = fit_logistic(intercept_only(6, 20), Link::logit);
  CHECK(thirty.beta[0] == doctest::Approx(std::log(0.3 / 0.7)).epsilon(1e-9));
}

TEST_CASE("logistic fit matches the grid-search likelihood oracle") {
  Rng rng(210);
  std::vector<SubjectRecord> subjects;
  for (int k = 0; k < 40; ++k) {
    SubjectRecord s;
    s.cluster_id = "c1";
    const double x1 = rng.normal();
    const double x2 = rng.normal();
    s.covariates = {x1, x2};
    const double p = 1.0 / (1.0 + std::exp(-(-0.2 + 0.8 * x1 - 0.5 * x2)));
    s.treatment = rng.bernoulli(p) ? 1 : 0;
    s.outcome = {1.0, 1, 2.0, 1};
    subjects.push_back(std::move(s));
  }
  const ClusterDataset ds = ClusterDataset::from_subjects(std::move(subjects));

  for (Link link : {Link::logit, Link::cloglog}) {
    const PsModelFit fit = fit_logistic(ds, link);
    const Eigen::VectorXd oracle = grid_mle(ds, link);
    REQUIRE(fit.converged);
    for (int d = 0; d < 3; ++d) {
      CAPTURE(d);
      CHECK(std::abs(fit.beta[d] - oracle[d]) < 1e-4);
    }
  }
}

TEST_CASE("separation is detected") {
  std::vector<SubjectRecord> subjects;
  for (int k = 0; k < 20; ++k) {
    SubjectRecord s;
    s.cluster_id = "c1";
    const double x = k < 10 ? -1.0 - 0.1 * k : 1.0 + 0.1 * k;
    s.covariates = {x};
    s.treatment = x > 0 ? 1 : 0;
    s.outcome = {1.0, 1, 2.0, 1};
    subjects.push_back(std::move(s));
  }
  const ClusterDataset ds = ClusterDataset::from_subjects(std::move(subjects));
  CHECK_THROWS_AS(fit_logistic(ds, Link::logit), SolverError);
}

TEST_CASE("rank-deficient designs are rejected") {
  Rng rng(211);
  std::vector<SubjectRecord> subjects;
  for (int k = 0; k < 30; ++k) {
    SubjectRecord s = testing::random_subject(rng, "c1", 0.5, 0);
    const double x = rng.normal();
    s.covariates = {x, 2.0 * x};  // collinear
    subjects.push_back(std::move(s));
  }
  subjects[0].treatment = 1;
  subjects[1].treatment = 0;
  const ClusterDataset ds = ClusterDataset::from_subjects(std::move(subjects));
  CHECK_THROWS_AS(fit_logistic(ds, Link::logit), SolverError);
}

TEST_CASE("fixed-effects offsets: two identical clusters share the reference offset") {
  Rng rng(212);
  std::vector<SubjectRecord> first = testing::random_mixed_cluster(rng, "c1", 12);
  std::vector<SubjectRecord> subjects = first;
  for (SubjectRecord s : first) {
    s.cluster_id = "c2";
    subjects.push_back(std::move(s));
  }
  const ClusterDataset ds = ClusterDataset::from_subjects(std::move(subjects));
  const PsModelFit fit = fit_fixed_effects(ds, Link::logit);
  CHECK(fit.cluster_offsets[0] == 0.0);
  CHECK(std::abs(fit.cluster_offsets[1]) < 1e-6);
}

TEST_CASE("fixed-effects offset difference matches the no-covariate closed form") {
  // Cluster A: 90% treated, cluster B: 10% treated, no covariates.
  std::vector<SubjectRecord> subjects;
  auto add = [&](const std::string& id, int treated, int total) {
    for (int k = 0; k < total; ++k) {
      SubjectRecord s;
      s.cluster_id = id;
      s.treatment = k < treated ? 1 : 0;
      s.outcome = {1.0, 1, 2.0, 1};
      subjects.push_back(std::move(s));
    }
  };
  add("A", 18, 20);
  add("B", 2, 20);
  const ClusterDataset ds = ClusterDataset::from_subjects(std::move(subjects));
  const PsModelFit fit = fit_fixed_effects(ds, Link::logit);
  CHECK(fit.beta[0] == doctest::Approx(logit(0.9)).epsilon(1e-7));
  const double diff = fit.cluster_offsets[0] - fit.cluster_offsets[1];
  CHECK(diff == doctest::Approx(logit(0.9) - logit(0.1)).epsilon(1e-7));
  CHECK(diff == doctest::Approx(4.394449).epsilon(1e-5));
}

TEST_CASE("fixed-effects fit matches the grid oracle on a 3-cluster set") {
  Rng rng(213);
  std::vector<SubjectRecord> subjects;
  for (int i = 0; i < 3; ++i) {
    auto c = testing::random_mixed_cluster(rng, "c" + std::to_string(i + 1), 15,
                                           0.3 + 0.2 * i);
    for (SubjectRecord& s : c) s.covariates.clear();
    subjects.insert(subjects.end(), c.begin(), c.end());
  }
  const ClusterDataset ds = ClusterDataset::from_subjects(std::move(subjects));
  const PsModelFit fit = fit_fixed_effects(ds, Link::logit);

  // Oracle over (intercept, offset2, offset3) via a dataset with the dummies
  // as explicit covariates.
  std::vector<SubjectRecord> dummied;
  for (std::size_t i = 0; i < ds.cluster_count(); ++i) {
    for (SubjectRecord s : ds.clusters()[i].subjects) {
      s.covariates = {i == 1 ? 1.0 : 0.0, i == 2 ? 1.0 : 0.0};
      dummied.push_back(std::move(s));
    }
  }
  const Eigen::VectorXd oracle =
      grid_mle(ClusterDataset::from_subjects(std::move(dummied)), Link::logit);
  CHECK(std::abs(fit.beta[0] - oracle[0]) < 1e-4);
  CHECK(std::abs(fit.cluster_offsets[1] - oracle[1]) < 1e-4);
  CHECK(std::abs(fit.cluster_offsets[2] - oracle[2]) < 1e-4);
}

TEST_CASE("random-intercept variance is near zero when clusters carry no effect") {
  Rng rng(214);
  std::vector<SubjectRecord> subjects;
  for (int i = 0; i < 20; ++i) {
    const std::string id = "c" + std::to_string(i + 1);
    for (int j = 0; j < 50; ++j) {
      SubjectRecord s;
      s.cluster_id = id;
      const double x = rng.normal();
      s.covariates = {x};
      const double p = 1.0 / (1.0 + std::exp(-(0.2 + 0.6 * x)));
      s.treatment = rng.bernoulli(p) ? 1 : 0;
      s.outcome = {1.0, 1, 2.0, 1};
      subjects.push_back(std::move(s));
    }
  }
  const ClusterDataset ds = ClusterDataset::from_subjects(std::move(subjects));
  const PsModelFit fit = fit_random_intercept(ds, Link::logit);
  CHECK(fit.random_variance < 0.05);
}

TEST_CASE("identical clusters get identical posterior modes") {
  Rng rng(215);
  const std::vector<SubjectRecord> base = testing::random_mixed_cluster(rng, "x", 20);
  std::vector<SubjectRecord> subjects;
  for (int i = 0; i < 4; ++i) {
    for (SubjectRecord s : base) {
      s.cluster_id = "c" + std::to_string(i + 1);
      subjects.push_back(std::move(s));
    }
  }
  const ClusterDataset ds = ClusterDataset::from_subjects(std::move(subjects));
  const PsModelFit fit = fit_random_intercept(ds, Link::logit);
  for (int i = 1; i < 4; ++i) {
    CHECK(std::abs(fit.cluster_offsets[i] - fit.cluster_offsets[0]) < 1e-6);
  }
}

TEST_CASE("posterior modes shrink relative to fixed-effects offsets") {
  Rng rng(216);
  std::vector<SubjectRecord> subjects;
  for (int i = 0; i < 8; ++i) {
    // Cluster-specific treated fractions spread well away from the mean.
    const double shift = (i % 2 == 0 ? 1.0 : -1.0) * (0.8 + 0.2 * (i / 2));
    const std::string id = "c" + std::to_string(i + 1);
    for (int j = 0; j < 40; ++j) {
      SubjectRecord s;
      s.cluster_id = id;
      const double x = rng.normal();
      s.covariates = {x};
      const double p = 1.0 / (1.0 + std::exp(-(0.3 * x + shift)));
      s.treatment = rng.bernoulli(p) ? 1 : 0;
      s.outcome = {1.0, 1, 2.0, 1};
      subjects.push_back(std::move(s));
    }
    subjects[subjects.size() - 40].treatment = 1;
    subjects[subjects.size() - 39].treatment = 0;
  }
  const ClusterDataset ds = ClusterDataset::from_subjects(std::move(subjects));

  const PsModelFit random = fit_random_intercept(ds, Link::logit);
  const PsModelFit fixed = fit_fixed_effects(ds, Link::logit);
  REQUIRE(!random.degenerate_variance);

  // Compare on the same scale: center both per-cluster effect vectors, then
  // the random-effect spread must be strictly smaller cluster by cluster.
  const double fixed_mean = fixed.cluster_offsets.mean();
  const double random_mean = random.cluster_offsets.mean();
  for (int i = 0; i < 8; ++i) {
    const double fe = fixed.cluster_offsets[i] - fixed_mean;
    const double re = random.cluster_offsets[i] - random_mean;
    CAPTURE(i);
    CHECK(std::abs(re) < std::abs(fe));
    CHECK(re * fe > 0.0);  // same direction
  }
}

TEST_CASE("predict_ps closed forms") {
  PsModelFit fit;
  fit.link = Link::logit;
  fit.backend = PsBackend::pooled;
  fit.beta = Eigen::Vector3d(0.0, 0.0, 0.0);

  SubjectRecord s;
  s.cluster_id = "c1";
  s.covariates = {1.0, 1.0};
  CHECK(predict_ps(fit, s) == doctest::Approx(0.5));

  fit.beta = Eigen::Vector3d(-0.2, 0.5, 0.5);
  CHECK(predict_ps(fit, s) ==
        doctest::Approx(1.0 / (1.0 + std::exp(-0.8))).epsilon(1e-9));
  CHECK(predict_ps(fit, s) == doctest::Approx(0.6899745).epsilon(1e-5));

  fit.link = Link::cloglog;
  fit.beta = Eigen::Vector3d(0.0, 0.0, 0.0);
  CHECK(predict_ps(fit, s) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-9));
}

TEST_CASE("predict_ps is monotone in a positive-coefficient covariate") {
  PsModelFit fit;
  fit.link = Link::logit;
  fit.backend = PsBackend::pooled;
  fit.beta = Eigen::Vector2d(-0.1, 0.7);
  double prev = 0.0;
  for (double x = -3.0; x <= 3.0; x += 0.25) {
    SubjectRecord s;
    s.covariates = {x};
    const double p = predict_ps(fit, s);
    CHECK(p > prev);
    prev = p;
  }
}

TEST_CASE("unknown cluster id is an error for cluster-aware backends") {
  Rng rng(217);
  std::vector<SubjectRecord> subjects;
  auto c1 = testing::random_mixed_cluster(rng, "c1", 10);
  auto c2 = testing::random_mixed_cluster(rng, "c2", 10);
  subjects.insert(subjects.end(), c1.begin(), c1.end());
  subjects.insert(subjects.end(), c2.begin(), c2.end());
  const ClusterDataset ds = ClusterDataset::from_subjects(std::move(subjects));
  const PsModelFit fit = fit_fixed_effects(ds, Link::logit);
  SubjectRecord stranger = testing::random_subject(rng, "nowhere");
  CHECK_THROWS_AS(predict_ps(fit, stranger), ValidationError);
}

TEST_CASE("initial weights closed forms and floor") {
  Rng rng(218);
  std::vector<SubjectRecord> subjects = testing::random_mixed_cluster(rng, "c1", 30);
  const ClusterDataset ds = ClusterDataset::from_subjects(std::move(subjects));
  const PsModelFit fit = fit_logistic(ds, Link::logit);
  const WeightSet w = initial_weights(fit, ds);
  CHECK(w.backend == WeightBackend::logistic);
  std::size_t k = 0;
  for (const SubjectRecord& s : ds.clusters()[0].subjects) {
    const double pi = predict_ps(fit, s);
    const double expected = s.treatment == 1 ? 1.0 / pi : 1.0 / (1.0 - pi);
    CHECK(w.weights[k] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(w.weights[k] >= 1.0);
    ++k;
  }

  // pi = 0.5 treated -> 2; pi = 0.2 control -> 1.25.
  PsModelFit manual;
  manual.link = Link::logit;
  manual.backend = PsBackend::pooled;
  manual.beta = Eigen::VectorXd::Zero(1);
  SubjectRecord t;
  t.treatment = 1;
  CHECK(initial_weights(manual, ClusterDataset::from_subjects({t})).weights[0] ==
        doctest::Approx(2.0));
  manual.beta[0] = std::log(0.2 / 0.8);
  SubjectRecord c;
  c.treatment = 0;
  CHECK(initial_weights(manual, ClusterDataset::from_subjects({c})).weights[0] ==
        doctest::Approx(1.25).epsilon(1e-12));
}

TEST_CASE("saturated model weight identity: mean of Z*d is 1") {
  // One binary covariate, fit with it as the only regressor (saturated by
  // group); sum of Z/pi-hat equals n within solver tolerance.
  Rng rng(219);
  std::vector<SubjectRecord> subjects;
  for (int k = 0; k < 200; ++k) {
    SubjectRecord s;
    s.cluster_id = "c1";
    const double g = rng.bernoulli(0.5) ? 1.0 : 0.0;
    s.covariates = {g};
    s.treatment = rng.bernoulli(g == 1.0 ? 0.7 : 0.35) ? 1 : 0;
    s.outcome = {1.0, 1, 2.0, 1};
    subjects.push_back(std::move(s));
  }
  const ClusterDataset ds = ClusterDataset::from_subjects(std::move(subjects));
  const PsModelFit fit = fit_logistic(ds, Link::logit);
  const WeightSet w = initial_weights(fit, ds);
  double zd = 0.0;
  std::size_t k = 0;
  for (const SubjectRecord& s : ds.clusters()[0].subjects) {
    if (s.treatment == 1) zd += w.weights[k];
    ++k;
  }
  CHECK(zd / 200.0 == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("extreme propensities are rejected before weight construction") {
  PsModelFit fit;
  fit.link = Link::logit;
  fit.backend = PsBackend::pooled;
  fit.beta = Eigen::Vector2d(0.0, 20.0);  // pi(x=1) ~ 1 - 2e-9
  SubjectRecord s;
  s.cluster_id = "c1";
  s.treatment = 1;
  s.covariates = {1.0};
  s.outcome = {1.0, 1, 2.0, 1};
  const ClusterDataset ds = ClusterDataset::from_subjects({s});
  CHECK_THROWS_WITH_AS(initial_weights(fit, ds),
                       doctest::Contains("extreme propensity"), ValidationError);
}
