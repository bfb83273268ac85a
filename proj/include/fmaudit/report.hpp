#pragma once

// Delimited-text report files. Every row starts with the config hash so rows
// from different experiments cannot be mixed silently.
//
//   metrics.tsv   config_hash dataset algorithm attribute metric value
//   audit.tsv     config_hash dataset attribute variant classifier mean_f1 std_f1
//   survival.tsv  config_hash dataset attribute task quantity value
//
// Values are written in shortest round-trip form so files read back exactly.

#include <algorithm>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fmaudit/audit.hpp"
#include "fmaudit/common.hpp"
#include "fmaudit/metrics.hpp"
#include "fmaudit/survival.hpp"

namespace fmaudit {

struct MetricRow {
  std::string config_hash;
  std::string dataset;
  std::string algorithm;  // fm-warp, fm-bpr, bprmf
  std::string attribute;  // "none" for the attribute-free model
  std::string metric;
  double value = 0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

struct AuditRow {
  std::string config_hash;
  std::string dataset;
  std::string attribute;
  Variant variant = Variant::none;
  std::string classifier;  // logreg, most-frequent
  double mean_f1 = 0;
  double std_f1 = 0;

  friend bool operator==(const AuditRow&, const AuditRow&) = default;
};

inline constexpr std::string_view kMetricsHeader = "config_hash\tdataset\talgorithm\tattribute\tmetric\tvalue";
inline constexpr std::string_view kAuditHeader =
    "config_hash\tdataset\tattribute\tvariant\tclassifier\tmean_f1\tstd_f1";
inline constexpr std::string_view kSurvivalHeader = "config_hash\tdataset\tattribute\ttask\tquantity\tvalue";

/// Accuracy and diversity rows for one model's lists.
inline std::vector<MetricRow> metric_rows(const std::string& hash, const std::string& dataset,
                                          const std::string& algorithm, const std::string& attribute,
                                          const EvalReport& acc, const DiversityReport& div) {
  const std::pair<const char*, double> values[] = {
      {"precision", acc.precision},
      {"recall", acc.recall},
      {"ndcg", acc.ndcg},
      {"hit_rate", acc.hit_rate},
      {"map", acc.map},
      {"evaluated_users", static_cast<double>(acc.evaluated_users)},
      {"item_coverage", static_cast<double>(div.item_coverage)},
      {"coverage_ratio", div.coverage_ratio},
      {"shannon_entropy", div.shannon_entropy},
      {"gini_diversity", div.gini_diversity},
  };
  std::vector<MetricRow> rows;
  for (const auto& [name, v] : values) rows.push_back({hash, dataset, algorithm, attribute, name, v});
  return rows;
}

inline void write_metric_rows(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.config_hash << '\t' << r.dataset << '\t' << r.algorithm << '\t' << r.attribute << '\t'
        << r.metric << '\t' << text::format_exact(r.value) << '\n';
  }
}

inline void write_audit_rows(std::ostream& out, const std::vector<AuditRow>& rows) {
  out << kAuditHeader << '\n';
  for (const auto& r : rows) {
    out << r.config_hash << '\t' << r.dataset << '\t' << r.attribute << '\t' << to_string(r.variant)
        << '\t' << r.classifier << '\t' << text::format_exact(r.mean_f1) << '\t'
        << text::format_exact(r.std_f1) << '\n';
  }
}

namespace detail {
inline std::vector<std::vector<std::string>> read_table(std::istream& in, std::string_view header,
                                                        std::string_view what) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != header) {
    throw DataError(std::string(what) + ": missing or unexpected header");
  }
  const auto columns = text::split(header, "\t").size();
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    std::vector<std::string> fields;
    for (const auto f : text::split(line, "\t")) fields.emplace_back(f);
    if (fields.size() != columns) {
      throw DataError(std::string(what) + " line " + std::to_string(line_no) + ": expected " +
                      std::to_string(columns) + " fields");
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

inline double parse_value(const std::string& s, std::string_view what) {
  double v = 0;
  if (!text::parse_number(s, v)) throw DataError(std::string(what) + ": bad number '" + s + "'");
  return v;
}
}  // namespace detail

inline std::vector<MetricRow> read_metric_rows(std::istream& in) {
  std::vector<MetricRow> rows;
  for (auto& f : detail::read_table(in, kMetricsHeader, "metrics report")) {
    rows.push_back({f[0], f[1], f[2], f[3], f[4], detail::parse_value(f[5], "metrics report")});
  }
  return rows;
}

inline std::vector<AuditRow> read_audit_rows(std::istream& in) {
  std::vector<AuditRow> rows;
  for (auto& f : detail::read_table(in, kAuditHeader, "audit report")) {
    Variant v;
    if (f[3] == to_string(Variant::none)) {
      v = Variant::none;
    } else if (f[3] == to_string(Variant::with_side_information)) {
      v = Variant::with_side_information;
    } else {
      throw DataError("audit report: unknown variant '" + f[3] + "'");
    }
    rows.push_back({f[0], f[1], f[2], v, f[4], detail::parse_value(f[5], "audit report"),
                    detail::parse_value(f[6], "audit report")});
  }
  return rows;
}

/// Survival inputs from report rows: LogReg macro-F1 per variant and the nDCG
/// of the FM models trained with `algorithm`.
inline SurvivalReport survival_from_rows(const std::vector<AuditRow>& audits,
                                         const std::vector<MetricRow>& metrics,
                                         const std::string& algorithm) {
  std::vector<ClassificationScore> cls;
  for (const auto& a : audits) {
    if (a.classifier == "logreg") cls.push_back({a.config_hash, a.attribute, a.variant, a.mean_f1});
  }
  std::vector<RecommendationScore> rec;
  for (const auto& m : metrics) {
    if (m.algorithm == algorithm && m.metric == "ndcg") rec.push_back({m.config_hash, m.attribute, m.value});
  }
  return build_survival_report(cls, rec);
}

inline void write_survival_rows(std::ostream& out, const SurvivalReport& rep, const std::string& dataset) {
  out << kSurvivalHeader << '\n';
  for (const auto& r : rep.rows) {
    const std::pair<const char*, double> cells[] = {
        {"classification\traw_difference", r.class_raw_diff},
        {"classification\tpercent_change", r.class_pct_change},
        {"recommendation\traw_difference", r.rec_raw_diff},
        {"recommendation\tpercent_change", r.rec_pct_change},
    };
    for (const auto& [key, v] : cells) {
      out << rep.config_hash << '\t' << dataset << '\t' << r.attribute << '\t' << key << '\t'
          << text::format_exact(v) << '\n';
    }
  }
}

/// Aligned plain-text table: one column per attribute, four rows (raw
/// difference and percent change for classification and recommendation).
/// Raw differences at four decimals, percent changes at two.
inline std::string survival_table(const SurvivalReport& rep, const std::string& dataset) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> head{dataset, "task", "quantity"};
  for (const auto& r : rep.rows) head.push_back(r.attribute);
  grid.push_back(head);
  auto add = [&](const char* task, const char* quantity, auto get, int decimals) {
    std::vector<std::string> row{"", task, quantity};
    for (const auto& r : rep.rows) row.push_back(text::format_fixed(round_to(get(r), decimals), decimals));
    grid.push_back(row);
  };
  add("classification", "raw difference", [](const SurvivalRow& r) { return r.class_raw_diff; }, 4);
  add("classification", "% change", [](const SurvivalRow& r) { return r.class_pct_change; }, 2);
  add("recommendation", "raw difference", [](const SurvivalRow& r) { return r.rec_raw_diff; }, 4);
  add("recommendation", "% change", [](const SurvivalRow& r) { return r.rec_pct_change; }, 2);

  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : grid)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream os;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t c = 0; c < grid[r].size(); ++c) {
      if (c) os << "  ";
      if (c < 3) {
        os << std::left << std::setw(static_cast<int>(width[c])) << grid[r][c];
      } else {
        os << std::right << std::setw(static_cast<int>(width[c])) << grid[r][c];
      }
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (const auto w : width) total += w;
      os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  return os.str();
}

/// Dataset statistics in the layout of the usual data-set summary table.
struct CorpusStats {
  std::string dataset;
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  std::vector<std::pair<std::string, std::size_t>> attribute_categories;
};

inline std::string format_stats(const CorpusStats& s) {
  std::ostringstream os;
  os << "dataset\tusers\titems\tinteractions\tattributes\n";
  os << s.dataset << '\t' << s.users << '\t' << s.items << '\t' << s.interactions << '\t';
  for (std::size_t i = 0; i < s.attribute_categories.size(); ++i) {
    if (i) os << ", ";
    os << s.attribute_categories[i].first << " (" << s.attribute_categories[i].second << ")";
  }
  os << '\n';
  return os.str();
}

}  // namespace fmaudit
