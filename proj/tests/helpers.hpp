#pragma once

#include <array>
#include <string>
#include <vector>

#include "cwr/rng.hpp"
#include "cwr/types.hpp"

namespace cwr::testing {

// Composite outcome from latent exponential event/censoring times; always
// satisfies the observable-structure invariants.
inline CompositeOutcome random_outcome(Rng& rng, double rate_h = 0.12,
                                       double rate_d = 0.08, double rate_c = 0.09) {
  const double th = rng.exponential(rate_h);
  const double td = rng.exponential(rate_d);
  const double tc = rng.exponential(rate_c);
  CompositeOutcome o;
  o.u_terminal = std::min(td, tc);
  o.delta_terminal = td <= tc ? 1 : 0;
  o.u_nonterminal = std::min(th, o.u_terminal);
  o.delta_nonterminal = th <= std::min(td, tc) ? 1 : 0;
  return o;
}

inline SubjectRecord random_subject(Rng& rng, const std::string& cluster_id,
                                    double treated_prob = 0.5,
                                    std::size_t covariates = 2) {
  SubjectRecord s;
  s.cluster_id = cluster_id;
  s.treatment = rng.bernoulli(treated_prob) ? 1 : 0;
  s.outcome = random_outcome(rng);
  for (std::size_t l = 0; l < covariates; ++l) {
    s.covariates.push_back(rng.normal());
  }
  return s;
}

// Cluster guaranteed to contain both arms.
inline std::vector<SubjectRecord> random_mixed_cluster(Rng& rng,
                                                       const std::string& id,
                                                       std::size_t n,
                                                       double treated_prob = 0.5) {
  std::vector<SubjectRecord> subjects;
  for (std::size_t j = 0; j < n; ++j) {
    subjects.push_back(random_subject(rng, id, treated_prob));
  }
  subjects[0].treatment = 1;
  subjects[1].treatment = 0;
  return subjects;
}

// Dataset where x1 drives both treatment assignment and the outcome hazard,
// so unweighted arms are visibly imbalanced.
inline ClusterDataset confounded_dataset(Rng& rng, std::size_t m, std::size_t n_i) {
  std::vector<SubjectRecord> subjects;
  for (std::size_t i = 0; i < m; ++i) {
    const std::string id = "c" + std::to_string(i + 1);
    for (std::size_t j = 0; j < n_i; ++j) {
      SubjectRecord s;
      s.cluster_id = id;
      const double x1 = rng.normal();
      const double x2 = rng.normal();
      s.covariates = {x1, x2};
      const double p = 1.0 / (1.0 + std::exp(-(0.3 + 1.2 * x1 - 0.4 * x2)));
      s.treatment = rng.bernoulli(p) ? 1 : 0;
      const double rate = 0.08 * std::exp(0.5 * x1);
      const double th = rng.exponential(rate * 1.4);
      const double td = rng.exponential(rate);
      const double tc = rng.exponential(0.09);
      s.outcome.u_terminal = std::min(td, tc);
      s.outcome.delta_terminal = td <= tc ? 1 : 0;
      s.outcome.u_nonterminal = std::min(th, s.outcome.u_terminal);
      s.outcome.delta_nonterminal = th <= std::min(td, tc) ? 1 : 0;
      subjects.push_back(std::move(s));
    }
    // Make sure both arms are present.
    subjects[subjects.size() - n_i].treatment = 1;
    subjects[subjects.size() - n_i + 1].treatment = 0;
  }
  return ClusterDataset::from_subjects(std::move(subjects));
}

inline WeightSet unit_weights(const ClusterDataset& ds) {
  WeightSet w;
  w.backend = WeightBackend::unadjusted;
  w.weights.assign(ds.total_subjects(), 1.0);
  return w;
}

}  // namespace cwr::testing
