#include "cwr/estimator.hpp"

#include <cmath>
#include <cstdint>

#include "cwr/errors.hpp"
#include "cwr/kernel.hpp"

namespace cwr {

namespace {

// Flat outcome columns for the pair loops; SubjectRecord is too fat to chase
// in the O(n^2) inner loop.
struct OutcomeColumns {
  std::vector<double> u_nt, u_t;
  std::vector<std::uint8_t> d_nt, d_t, z;

  void reserve(std::size_t n) {
    u_nt.reserve(n);
    u_t.reserve(n);
    d_nt.reserve(n);
    d_t.reserve(n);
    z.reserve(n);
  }

  void push(const SubjectRecord& s) {
    u_nt.push_back(s.outcome.u_nonterminal);
    u_t.push_back(s.outcome.u_terminal);
    d_nt.push_back(static_cast<std::uint8_t>(s.outcome.delta_nonterminal));
    d_t.push_back(static_cast<std::uint8_t>(s.outcome.delta_terminal));
    z.push_back(static_cast<std::uint8_t>(s.treatment));
  }

  std::size_t size() const { return z.size(); }

  // compare(outcome[a], outcome[b]) without materializing CompositeOutcome.
  WinValue verdict(std::size_t a, std::size_t b) const {
    if (d_t[b] && u_t[b] < u_t[a]) return WinValue::WinFirst;
    if (d_t[a] && u_t[a] < u_t[b]) return WinValue::WinSecond;
    if (d_nt[b] && u_nt[b] < u_nt[a]) return WinValue::WinFirst;
    if (d_nt[a] && u_nt[a] < u_nt[b]) return WinValue::WinSecond;
    return WinValue::Tie;
  }
};

}  // namespace

std::pair<double, double> tau_pair(const Cluster& cluster,
                                   std::span<const double> weights) {
  const std::size_t n = cluster.subjects.size();
  if (n < 2) {
    throw DegenerateDataError("cluster " + cluster.id +
                              " has fewer than 2 subjects");
  }
  OutcomeColumns cols;
  cols.reserve(n);
  for (const SubjectRecord& s : cluster.subjects) cols.push(s);

  double win_mass = 0.0;
  double loss_mass = 0.0;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    for (std::size_t k = j + 1; k < n; ++k) {
      if (cols.z[j] == cols.z[k]) continue;
      // Treated subject first, so WinFirst is a treated win.
      const std::size_t t = cols.z[j] ? j : k;
      const std::size_t c = cols.z[j] ? k : j;
      const WinValue v = cols.verdict(t, c);
      if (v == WinValue::Tie) continue;
      const double mass = 0.5 * weights[j] * weights[k];
      if (v == WinValue::WinFirst) {
        win_mass += mass;
      } else {
        loss_mass += mass;
      }
    }
  }
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  return {win_mass / pairs, loss_mass / pairs};
}

double cluster_weight(const Cluster& cluster, std::span<const double> weights) {
  double treated = 0.0, control = 0.0;
  for (std::size_t j = 0; j < cluster.subjects.size(); ++j) {
    if (cluster.subjects[j].treatment == 1) {
      treated += weights[j];
    } else {
      control += weights[j];
    }
  }
  return 0.5 * treated * control;
}

EstimateResult stratified_estimate(const ClusterDataset& ds, const WeightSet& w) {
  validate_weights(w, ds);
  if (ds.cluster_count() == 0) {
    throw DegenerateDataError("empty dataset");
  }

  EstimateResult result;
  double win_mass = 0.0;
  double loss_mass = 0.0;
  double retained_weight = 0.0;
  for (std::size_t i = 0; i < ds.cluster_count(); ++i) {
    const Cluster& cluster = ds.clusters()[i];
    const std::span<const double> wi = w.for_cluster(ds, i);
    ClusterComponents comp;
    comp.cluster_id = cluster.id;
    std::tie(comp.tau1, comp.tau2) = tau_pair(cluster, wi);
    comp.cluster_weight = cluster_weight(cluster, wi);
    if (comp.tau2 > 0.0) {
      comp.mu_defined = true;
      comp.mu = comp.tau1 / comp.tau2;
    }
    if (comp.tau1 > 0.0 && comp.tau2 > 0.0) {
      const double n_i = static_cast<double>(cluster.subjects.size());
      const double pairs = 0.5 * n_i * (n_i - 1.0);
      win_mass += pairs * comp.tau1;
      loss_mass += pairs * comp.tau2;
      retained_weight += comp.cluster_weight;
    } else {
      result.excluded_clusters.push_back(cluster.id);
    }
    result.per_cluster.push_back(std::move(comp));
  }
  if (loss_mass <= 0.0 || win_mass <= 0.0) {
    throw DegenerateDataError(
        "all clusters are degenerate (no cluster has both wins and losses)");
  }
  result.total_weight = retained_weight;
  result.wr = win_mass / loss_mass;
  result.log_wr = std::log(result.wr);
  return result;
}

EstimateResult ipw_estimate_independent(const ClusterDataset& ds,
                                        const PsModelFit& fit, double epsilon) {
  const std::size_t n = ds.total_subjects();
  if (n < 2) {
    throw DegenerateDataError("fewer than 2 subjects");
  }

  OutcomeColumns cols;
  std::vector<double> d(n);  // 1/pi for treated, 1/(1-pi) for controls
  cols.reserve(n);
  std::size_t k = 0;
  for (const Cluster& c : ds.clusters()) {
    for (const SubjectRecord& s : c.subjects) {
      cols.push(s);
      const double pi = predict_ps(fit, s);
      if (pi <= epsilon || pi >= 1.0 - epsilon) {
        throw ValidationError("extreme propensity for subject " +
                              std::to_string(k + 1) +
                              "; win ratio weights are unstable");
      }
      d[k] = s.treatment == 1 ? 1.0 / pi : 1.0 / (1.0 - pi);
      ++k;
    }
  }

  double win_mass = 0.0, loss_mass = 0.0;
  for (std::size_t a = 0; a + 1 < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (cols.z[a] == cols.z[b]) continue;
      const std::size_t t = cols.z[a] ? a : b;
      const std::size_t c = cols.z[a] ? b : a;
      const WinValue v = cols.verdict(t, c);
      if (v == WinValue::Tie) continue;
      const double mass = 0.5 * d[a] * d[b];
      if (v == WinValue::WinFirst) {
        win_mass += mass;
      } else {
        loss_mass += mass;
      }
    }
  }
  if (win_mass <= 0.0 || loss_mass <= 0.0) {
    throw DegenerateDataError(
        "undefined win ratio: pooled win or loss mass is zero");
  }
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  EstimateResult result;
  result.tau1 = win_mass / pairs;
  result.tau2 = loss_mass / pairs;
  result.wr = result.tau1 / result.tau2;
  result.log_wr = std::log(result.wr);
  return result;
}

}  // namespace cwr
