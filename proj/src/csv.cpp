#include "cwr/csv.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace cwr {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field += ch;
    }
  }
  fields.push_back(field);
  return fields;
}

double parse_number(const std::string& token, const std::string& where) {
  if (token.empty()) {
    throw ValidationError(where + ": missing value");
  }
  const char* begin = token.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end != begin + token.size()) {
    throw ValidationError(where + ": value '" + token +
                          "' is not numeric (missing data is rejected, not imputed)");
  }
  return v;
}

int parse_indicator(const std::string& token, const std::string& where) {
  if (token == "0") return 0;
  if (token == "1") return 1;
  throw ValidationError(where + ": value '" + token + "' must be literal 0 or 1");
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ClusterDataset parse_csv(std::istream& in, const std::string& source_name) {
  std::string line;
  if (!std::getline(in, line)) {
    throw SchemaError(source_name + ": empty file, header required");
  }
  const std::vector<std::string> header = split_line(line);

  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (!column.emplace(header[k], k).second) {
      throw SchemaError(source_name + ": duplicate column '" + header[k] + "'");
    }
  }

  auto require = [&](const std::string& name) -> std::size_t {
    auto it = column.find(name);
    if (it == column.end()) {
      throw SchemaError(source_name + ": missing required column '" + name + "'");
    }
    return it->second;
  };

  const std::size_t col_cluster = require("cluster");
  const std::size_t col_treatment = require("treatment");
  const std::size_t col_tn = require("t_nonterminal");
  const std::size_t col_dn = require("d_nonterminal");
  const std::size_t col_tt = require("t_terminal");
  const std::size_t col_dt = require("d_terminal");

  std::vector<std::size_t> covariate_cols;
  for (std::size_t p = 1;; ++p) {
    auto it = column.find("x" + std::to_string(p));
    if (it == column.end()) break;
    covariate_cols.push_back(it->second);
  }
  const std::size_t expected = 6 + covariate_cols.size();
  if (column.size() != expected) {
    throw SchemaError(source_name +
                      ": unexpected columns in header (expected cluster,treatment,"
                      "t_nonterminal,d_nonterminal,t_terminal,d_terminal,x1..xp)");
  }

  std::vector<SubjectRecord> subjects;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = split_line(line);
    const std::string where = source_name + " line " + std::to_string(line_no);
    if (fields.size() != header.size()) {
      throw ValidationError(where + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(fields.size()));
    }
    SubjectRecord s;
    s.cluster_id = fields[col_cluster];
    if (s.cluster_id.empty()) {
      throw ValidationError(where + ": empty cluster id");
    }
    s.treatment = parse_indicator(fields[col_treatment], where + " (treatment)");
    s.outcome.u_nonterminal = parse_number(fields[col_tn], where + " (t_nonterminal)");
    s.outcome.delta_nonterminal =
        parse_indicator(fields[col_dn], where + " (d_nonterminal)");
    s.outcome.u_terminal = parse_number(fields[col_tt], where + " (t_terminal)");
    s.outcome.delta_terminal = parse_indicator(fields[col_dt], where + " (d_terminal)");
    validate_outcome(s.outcome, where);
    s.covariates.reserve(covariate_cols.size());
    for (std::size_t p = 0; p < covariate_cols.size(); ++p) {
      s.covariates.push_back(parse_number(fields[covariate_cols[p]],
                                          where + " (x" + std::to_string(p + 1) + ")"));
    }
    subjects.push_back(std::move(s));
  }
  return ClusterDataset::from_subjects(std::move(subjects));
}

ClusterDataset parse_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open input file: " + path);
  }
  return parse_csv(in, path);
}

void write_csv(const ClusterDataset& ds, std::ostream& out) {
  out << "cluster,treatment,t_nonterminal,d_nonterminal,t_terminal,d_terminal";
  for (std::size_t p = 1; p <= ds.covariate_dim(); ++p) {
    out << ",x" << p;
  }
  out << "\n";
  for (const Cluster& c : ds.clusters()) {
    for (const SubjectRecord& s : c.subjects) {
      out << s.cluster_id << ',' << s.treatment << ','
          << format_double(s.outcome.u_nonterminal) << ',' << s.outcome.delta_nonterminal
          << ',' << format_double(s.outcome.u_terminal) << ',' << s.outcome.delta_terminal;
      for (double x : s.covariates) {
        out << ',' << format_double(x);
      }
      out << "\n";
    }
  }
}

std::string to_csv_string(const ClusterDataset& ds) {
  std::ostringstream out;
  write_csv(ds, out);
  return out.str();
}

void write_csv_file(const ClusterDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw ValidationError("cannot open output file: " + path);
  }
  write_csv(ds, out);
}

FilterResult filter_single_arm_clusters(const ClusterDataset& ds) {
  std::vector<SubjectRecord> kept;
  FilterReport report;
  for (const Cluster& c : ds.clusters()) {
    std::size_t treated = 0;
    for (const SubjectRecord& s : c.subjects) {
      treated += static_cast<std::size_t>(s.treatment);
    }
    if (treated == 0 || treated == c.subjects.size()) {
      report.excluded.push_back({c.id, c.subjects.size()});
    } else {
      kept.insert(kept.end(), c.subjects.begin(), c.subjects.end());
    }
  }
  if (kept.empty()) {
    throw DegenerateDataError(
        "all clusters are single-arm; no cluster retains both treated and control "
        "subjects");
  }
  return {ClusterDataset::from_subjects(std::move(kept)), std::move(report)};
}

}  // namespace cwr
