#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cwr/types.hpp"

namespace cwr {

// Expected header columns, in any order, names fixed:
//   cluster,treatment,t_nonterminal,d_nonterminal,t_terminal,d_terminal,x1..xp
// treatment and the two indicators must be literal 0/1; times and covariates
// decimal. Rows with missing or non-numeric fields are rejected, never
// imputed. Errors name the offending line.
ClusterDataset parse_csv(std::istream& in, const std::string& source_name = "<stream>");
ClusterDataset parse_csv_file(const std::string& path);

// Canonical column order, full float precision; parse(write(ds)) == ds.
void write_csv(const ClusterDataset& ds, std::ostream& out);
std::string to_csv_string(const ClusterDataset& ds);
void write_csv_file(const ClusterDataset& ds, const std::string& path);

struct FilterReport {
  struct Exclusion {
    std::string cluster_id;
    std::size_t subjects = 0;
    bool operator==(const Exclusion&) const = default;
  };
  std::vector<Exclusion> excluded;
  bool operator==(const FilterReport&) const = default;
};

struct FilterResult {
  ClusterDataset dataset;
  FilterReport report;
};

// Drops clusters that do not contain at least one treated and one control
// subject. Throws DegenerateDataError if nothing survives. Idempotent.
FilterResult filter_single_arm_clusters(const ClusterDataset& ds);

}  // namespace cwr
