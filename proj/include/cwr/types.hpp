#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cwr/errors.hpp"

namespace cwr {

// Observed semi-competing-risks composite outcome for one subject. Times are
// days; the terminal event (e.g. death) can censor the non-terminal event
// (e.g. a complication) but not vice versa.
struct CompositeOutcome {
  double u_nonterminal = 0.0;  // min(non-terminal event, terminal event, censoring)
  int delta_nonterminal = 0;   // 1 iff the non-terminal event was observed
  double u_terminal = 0.0;     // min(terminal event, censoring)
  int delta_terminal = 0;      // 1 iff the terminal event was observed

  bool operator==(const CompositeOutcome&) const = default;
};

// Throws ValidationError if the outcome violates the observable structure:
// negative/non-finite times, u_nonterminal > u_terminal, indicators outside
// {0,1}, or a censored non-terminal time strictly before an observed death
// (the non-terminal observation window cannot end before the death that
// terminates it). `context` names the subject or row in the message.
void validate_outcome(const CompositeOutcome& outcome, const std::string& context);

struct SubjectRecord {
  std::string cluster_id;
  int treatment = 0;  // 1 = treatment of interest
  CompositeOutcome outcome;
  std::vector<double> covariates;

  bool operator==(const SubjectRecord&) const = default;
};

struct Cluster {
  std::string id;
  std::vector<SubjectRecord> subjects;  // original row order

  bool operator==(const Cluster&) const = default;
};

// Subjects grouped by cluster, in first-appearance order. Immutable after
// construction; all estimation code indexes subjects in (cluster, within-
// cluster) order, and flat per-subject vectors (weights, propensities) use
// that same order.
class ClusterDataset {
 public:
  ClusterDataset() = default;

  // Groups subjects by cluster_id (first-appearance order, file order kept
  // within cluster) and validates every record. Throws ValidationError on
  // inconsistent covariate lengths, invalid outcomes, or non-binary
  // treatment flags.
  static ClusterDataset from_subjects(std::vector<SubjectRecord> subjects);

  const std::vector<Cluster>& clusters() const { return clusters_; }
  std::size_t cluster_count() const { return clusters_.size(); }
  std::size_t total_subjects() const { return total_subjects_; }
  std::size_t covariate_dim() const { return covariate_dim_; }

  std::vector<std::size_t> cluster_sizes() const;

  // Offset of cluster `i`'s first subject in flat per-subject vectors.
  std::size_t subject_offset(std::size_t cluster_index) const {
    return offsets_[cluster_index];
  }

  bool operator==(const ClusterDataset&) const = default;

 private:
  std::vector<Cluster> clusters_;
  std::vector<std::size_t> offsets_;
  std::size_t total_subjects_ = 0;
  std::size_t covariate_dim_ = 0;
};

enum class WeightBackend {
  unadjusted,
  logistic,
  fixed_effects,
  random_effects,
  calibration,
};

const char* to_string(WeightBackend backend);

struct SolverDiagnostics {
  int iterations = 0;
  double max_constraint_residual = 0.0;
  bool converged = true;
};

// Per-subject analysis weights in dataset order (see ClusterDataset).
struct WeightSet {
  std::vector<double> weights;
  WeightBackend backend = WeightBackend::unadjusted;
  SolverDiagnostics diagnostics;

  std::span<const double> for_cluster(const ClusterDataset& ds, std::size_t i) const {
    return std::span<const double>(weights).subspan(ds.subject_offset(i),
                                                    ds.clusters()[i].subjects.size());
  }
};

// Throws ValidationError unless every weight is finite and > 0 and the
// length matches the dataset.
void validate_weights(const WeightSet& w, const ClusterDataset& ds);

}  // namespace cwr
