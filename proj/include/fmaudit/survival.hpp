#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fmaudit {

/// variant - base: the with-side-information value minus the attribute-free one.
inline double raw_difference(double base, double variant) {
  if (!std::isfinite(base) || !std::isfinite(variant)) {
    throw std::invalid_argument("raw_difference needs finite inputs");
  }
  return variant - base;
}

class UndefinedChangeError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// (variant - base) / base, at full precision. Use round_to(x, 2) for display.
inline double percent_change(double base, double variant) {
  if (base == 0) throw UndefinedChangeError("percent change from a zero base is undefined");
  return raw_difference(base, variant) / base;
}

// Half away from zero, after a tiny nudge that absorbs binary representation
// error (0.125 stored as 0.12499999... still rounds to 0.13).
inline double round_to(double x, int decimals) {
  const double scale = std::pow(10.0, decimals);
  const double scaled = x * scale;
  return std::round(scaled + std::copysign(1e-9, scaled)) / scale;
}

enum class Variant { none, with_side_information };

inline std::string_view to_string(Variant v) {
  return v == Variant::none ? "none" : "with-side-information";
}

/// Mean macro-F1 of the list classifier for one target attribute, trained on
/// lists from the attribute-free model (none) or from the model that used the
/// attribute (with-side-information).
struct ClassificationScore {
  std::string config_hash;
  std::string attribute;
  Variant variant = Variant::none;
  double macro_f1 = 0;
};

/// nDCG of one model. `attribute` is "none" for the attribute-free model.
struct RecommendationScore {
  std::string config_hash;
  std::string attribute;
  double ndcg = 0;
};

struct SurvivalRow {
  std::string attribute;
  double class_raw_diff = 0;
  double class_pct_change = 0;
  double rec_raw_diff = 0;
  double rec_pct_change = 0;
};

struct SurvivalReport {
  std::string config_hash;
  std::vector<SurvivalRow> rows;  // in order of first appearance of each attribute
};

/// One row per attribute: classification uses macro-F1, recommendation uses nDCG.
/// All inputs must carry the same config hash, every attribute needs both
/// classification variants and a with-attribute nDCG, and the attribute-free
/// nDCG must be present.
inline SurvivalReport build_survival_report(std::span<const ClassificationScore> audits,
                                            std::span<const RecommendationScore> evals) {
  SurvivalReport rep;
  std::optional<std::string> hash;
  auto check_hash = [&](const std::string& h) {
    if (!hash) hash = h;
    if (*hash != h) {
      throw std::invalid_argument("report rows from different configurations (" + *hash + " vs " +
                                  h + ") cannot be combined");
    }
  };

  std::vector<std::string> order;
  std::map<std::string, std::optional<double>> f1_none, f1_with;
  for (const auto& a : audits) {
    check_hash(a.config_hash);
    if (std::find(order.begin(), order.end(), a.attribute) == order.end()) order.push_back(a.attribute);
    (a.variant == Variant::none ? f1_none : f1_with)[a.attribute] = a.macro_f1;
  }
  std::optional<double> ndcg_none;
  std::map<std::string, double> ndcg_with;
  for (const auto& e : evals) {
    check_hash(e.config_hash);
    if (e.attribute == "none") {
      ndcg_none = e.ndcg;
    } else {
      ndcg_with[e.attribute] = e.ndcg;
    }
  }
  if (!ndcg_none) throw std::invalid_argument("missing nDCG for the attribute-free model");

  for (const auto& attr : order) {
    const auto& fn = f1_none[attr];
    const auto& fw = f1_with[attr];
    if (!fn) throw std::invalid_argument("attribute '" + attr + "': missing classification for variant none");
    if (!fw) {
      throw std::invalid_argument("attribute '" + attr +
                                  "': missing classification for variant with-side-information");
    }
    const auto it = ndcg_with.find(attr);
    if (it == ndcg_with.end()) throw std::invalid_argument("attribute '" + attr + "': missing nDCG");
    SurvivalRow row;
    row.attribute = attr;
    row.class_raw_diff = raw_difference(*fn, *fw);
    row.class_pct_change = percent_change(*fn, *fw);
    row.rec_raw_diff = raw_difference(*ndcg_none, it->second);
    row.rec_pct_change = percent_change(*ndcg_none, it->second);
    rep.rows.push_back(row);
  }
  rep.config_hash = hash.value_or("");
  return rep;
}

}  // namespace fmaudit
