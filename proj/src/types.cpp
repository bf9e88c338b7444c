#include "cwr/types.hpp"

#include <cmath>
#include <unordered_map>

namespace cwr {

void validate_outcome(const CompositeOutcome& o, const std::string& context) {
  auto fail = [&](const std::string& what) {
    throw ValidationError(context + ": " + what);
  };
  if (!std::isfinite(o.u_nonterminal) || !std::isfinite(o.u_terminal)) {
    fail("non-finite event time");
  }
  if (o.u_nonterminal < 0.0 || o.u_terminal < 0.0) {
    fail("negative event time");
  }
  if (o.delta_nonterminal != 0 && o.delta_nonterminal != 1) {
    fail("d_nonterminal must be 0 or 1");
  }
  if (o.delta_terminal != 0 && o.delta_terminal != 1) {
    fail("d_terminal must be 0 or 1");
  }
  if (o.u_nonterminal > o.u_terminal) {
    fail("u_nonterminal exceeds u_terminal");
  }
  if (o.delta_nonterminal == 0 && o.delta_terminal == 1 &&
      o.u_nonterminal < o.u_terminal) {
    // The non-terminal observation window cannot close before the death that
    // terminates it; equality (death without a prior non-terminal event) is
    // the only valid shape for the (0,1) indicator pair.
    fail("censored non-terminal time before an observed terminal event");
  }
}

ClusterDataset ClusterDataset::from_subjects(std::vector<SubjectRecord> subjects) {
  ClusterDataset ds;
  if (subjects.empty()) {
    return ds;
  }
  ds.covariate_dim_ = subjects.front().covariates.size();

  std::unordered_map<std::string, std::size_t> index_of;
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    SubjectRecord& s = subjects[k];
    const std::string context = "subject " + std::to_string(k + 1) +
                                " (cluster " + s.cluster_id + ")";
    if (s.treatment != 0 && s.treatment != 1) {
      throw ValidationError(context + ": treatment must be 0 or 1");
    }
    if (s.covariates.size() != ds.covariate_dim_) {
      throw ValidationError(context + ": covariate length " +
                            std::to_string(s.covariates.size()) +
                            " differs from first subject's " +
                            std::to_string(ds.covariate_dim_));
    }
    for (double x : s.covariates) {
      if (!std::isfinite(x)) {
        throw ValidationError(context + ": non-finite covariate");
      }
    }
    validate_outcome(s.outcome, context);

    auto [it, inserted] = index_of.emplace(s.cluster_id, ds.clusters_.size());
    if (inserted) {
      ds.clusters_.push_back(Cluster{s.cluster_id, {}});
    }
    ds.clusters_[it->second].subjects.push_back(std::move(s));
  }

  ds.offsets_.resize(ds.clusters_.size());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < ds.clusters_.size(); ++i) {
    ds.offsets_[i] = offset;
    offset += ds.clusters_[i].subjects.size();
  }
  ds.total_subjects_ = offset;
  return ds;
}

std::vector<std::size_t> ClusterDataset::cluster_sizes() const {
  std::vector<std::size_t> sizes;
  sizes.reserve(clusters_.size());
  for (const Cluster& c : clusters_) {
    sizes.push_back(c.subjects.size());
  }
  return sizes;
}

const char* to_string(WeightBackend backend) {
  switch (backend) {
    case WeightBackend::unadjusted: return "unadjusted";
    case WeightBackend::logistic: return "logistic";
    case WeightBackend::fixed_effects: return "fixed_effects";
    case WeightBackend::random_effects: return "random_effects";
    case WeightBackend::calibration: return "calibration";
  }
  return "unknown";
}

void validate_weights(const WeightSet& w, const ClusterDataset& ds) {
  if (w.weights.size() != ds.total_subjects()) {
    throw ValidationError("weight vector length " + std::to_string(w.weights.size()) +
                          " does not match dataset size " +
                          std::to_string(ds.total_subjects()));
  }
  for (std::size_t k = 0; k < w.weights.size(); ++k) {
    const double v = w.weights[k];
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ValidationError("weight " + std::to_string(k + 1) +
                            " is not a positive finite number");
    }
  }
}

}  // namespace cwr
