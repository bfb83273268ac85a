#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "fmaudit/corpus.hpp"
#include "fmaudit/topn.hpp"

namespace fmaudit {

/// Means over evaluated users. Users whose test set is empty are skipped and
/// counted in `skipped_users`.
struct EvalReport {
  double precision = 0;
  double recall = 0;
  double ndcg = 0;
  double hit_rate = 0;
  double map = 0;
  std::size_t n = 0;
  std::size_t evaluated_users = 0;
  std::size_t skipped_users = 0;
};

struct DiversityReport {
  std::size_t item_coverage = 0;
  double coverage_ratio = 0;
  double shannon_entropy = 0;
  double gini_diversity = 0;
};

/// P@N = hits/N, R@N = hits/|test_u|, nDCG@N with binary gains and
/// 1/log2(rank+1) discounts (ideal = first min(N, |test_u|) positions),
/// HR@N = [hits > 0], AP = (1/|test_u|) sum over hit ranks of precision@rank.
inline EvalReport accuracy_metrics(const TopNList& lists, const ImplicitDataset& test) {
  if (lists.n == 0) throw std::invalid_argument("list length n must be positive");
  EvalReport rep;
  rep.n = lists.n;
  const std::size_t users = std::min(lists.lists.size(), test.relevant.size());
  for (std::size_t u = 0; u < users; ++u) {
    const auto& truth_seq = test.relevant[u];
    if (truth_seq.empty()) {
      ++rep.skipped_users;
      continue;
    }
    std::unordered_set<std::uint32_t> truth;
    for (const auto& e : truth_seq) truth.insert(e.item);

    const auto& list = lists.lists[u];
    const std::size_t depth = std::min(list.size(), lists.n);
    double hits = 0, dcg = 0, ap = 0;
    for (std::size_t r = 0; r < depth; ++r) {
      if (!truth.count(list[r].item)) continue;
      hits += 1;
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
      ap += hits / static_cast<double>(r + 1);
    }
    double idcg = 0;
    const std::size_t ideal = std::min(lists.n, truth.size());
    for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);

    rep.precision += hits / static_cast<double>(lists.n);
    rep.recall += hits / static_cast<double>(truth.size());
    rep.ndcg += dcg / idcg;
    rep.hit_rate += hits > 0 ? 1.0 : 0.0;
    rep.map += ap / static_cast<double>(truth.size());
    ++rep.evaluated_users;
  }
  rep.skipped_users += test.relevant.size() - users;
  if (rep.evaluated_users > 0) {
    const double m = static_cast<double>(rep.evaluated_users);
    rep.precision /= m;
    rep.recall /= m;
    rep.ndcg /= m;
    rep.hit_rate /= m;
    rep.map /= m;
  }
  return rep;
}

/// How many times each catalog item was recommended.
inline std::vector<std::size_t> recommendation_counts(const TopNList& lists,
                                                      std::size_t catalog_size) {
  std::vector<std::size_t> counts(catalog_size, 0);
  for (const auto& list : lists.lists) {
    for (const auto& rec : list) {
      if (rec.item >= catalog_size) throw std::out_of_range("recommended item outside catalog");
      ++counts[rec.item];
    }
  }
  return counts;
}

inline std::size_t item_coverage(const TopNList& lists) {
  std::unordered_set<std::uint32_t> seen;
  for (const auto& list : lists.lists) {
    for (const auto& rec : list) seen.insert(rec.item);
  }
  return seen.size();
}

/// Entropy in bits of the distribution of recommendation slots over items.
/// Items with equal counts are summed as one term, (m c / T) log2(T / c), so a
/// uniform distribution over M items gives exactly log2 M.
inline double shannon_entropy(const TopNList& lists) {
  std::map<std::size_t, std::size_t> multiplicity;  // count -> number of items with it
  {
    std::uint32_t max_item = 0;
    for (const auto& list : lists.lists)
      for (const auto& rec : list) max_item = std::max(max_item, rec.item);
    for (const auto c : recommendation_counts(lists, std::size_t(max_item) + 1)) {
      if (c > 0) ++multiplicity[c];
    }
  }
  std::size_t total = 0;
  for (const auto& [c, m] : multiplicity) total += c * m;
  if (total == 0) throw std::invalid_argument("shannon_entropy of empty recommendation lists");
  const double t = static_cast<double>(total);
  double h = 0;
  for (const auto& [c, m] : multiplicity) {
    const double mass = static_cast<double>(c * m);
    h += (mass / t) * std::log2(t / static_cast<double>(c));
  }
  return h;
}

/// 1 - G, where G is the Gini coefficient of the recommendation counts over the
/// whole catalog (never-recommended items count as zeros):
///   G = sum_i (2i - m - 1) x_(i) / (m sum x),   x_(1) <= ... <= x_(m).
/// 1 means every item is recommended equally often.
inline double gini_diversity(const TopNList& lists, std::size_t catalog_size) {
  auto counts = recommendation_counts(lists, catalog_size);
  std::sort(counts.begin(), counts.end());
  const double m = static_cast<double>(catalog_size);
  double total = 0, weighted = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double x = static_cast<double>(counts[i]);
    total += x;
    weighted += (2.0 * static_cast<double>(i + 1) - m - 1.0) * x;
  }
  if (total == 0) throw std::invalid_argument("gini_diversity of empty recommendation lists");
  return 1.0 - weighted / (m * total);
}

inline DiversityReport diversity_metrics(const TopNList& lists, std::size_t catalog_size) {
  DiversityReport d;
  d.item_coverage = item_coverage(lists);
  d.coverage_ratio = catalog_size ? static_cast<double>(d.item_coverage) / catalog_size : 0.0;
  d.shannon_entropy = shannon_entropy(lists);
  d.gini_diversity = gini_diversity(lists, catalog_size);
  return d;
}

}  // namespace fmaudit
