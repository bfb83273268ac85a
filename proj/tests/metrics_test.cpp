#include "fmaudit/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fmaudit/common.hpp"

namespace fmaudit {
namespace {

TopNList lists_of(std::size_t n, const std::vector<std::vector<std::uint32_t>>& items) {
  TopNList t;
  t.n = n;
  for (const auto& row : items) {
    std::vector<Recommendation> list;
    double score = 1.0;
    for (const auto i : row) list.push_back({i, score -= 0.01});
    t.lists.push_back(list);
  }
  return t;
}

ImplicitDataset test_of(std::size_t catalog, const std::vector<std::vector<std::uint32_t>>& items) {
  ImplicitDataset d;
  for (std::size_t u = 0; u < items.size(); ++u) d.users.push_back("u" + std::to_string(u));
  for (std::size_t i = 0; i < catalog; ++i) d.items.push_back("i" + std::to_string(i));
  for (const auto& row : items) {
    std::vector<Event> ev;
    for (const auto i : row) ev.push_back({i, 0});
    d.relevant.push_back(ev);
  }
  return d;
}

TEST(AccuracyMetrics, PerfectListScoresOne) {
  const auto r = accuracy_metrics(lists_of(3, {{4, 1, 7}}), test_of(10, {{1, 4, 7}}));
  EXPECT_DOUBLE_EQ(r.precision, 1.0);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_DOUBLE_EQ(r.ndcg, 1.0);
  EXPECT_DOUBLE_EQ(r.hit_rate, 1.0);
  EXPECT_DOUBLE_EQ(r.map, 1.0);
}

TEST(AccuracyMetrics, NoHitsScoresZero) {
  const auto r = accuracy_metrics(lists_of(3, {{0, 1, 2}, {3, 4, 5}}), test_of(10, {{9}, {8, 7}}));
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.ndcg, 0.0);
  EXPECT_EQ(r.hit_rate, 0.0);
  EXPECT_EQ(r.map, 0.0);
}

// Hits: u0 at rank 1; u1 at rank 3; u2 at ranks 1 and 3 (two test items).
TEST(AccuracyMetrics, ThreeUserHandComputation) {
  const auto r = accuracy_metrics(lists_of(3, {{1, 2, 3}, {4, 5, 6}, {7, 8, 9}}),
                                  test_of(10, {{1}, {6}, {7, 9}}));
  const double ndcg_u1 = (1 / std::log2(4.0)) / (1 / std::log2(2.0));
  EXPECT_DOUBLE_EQ(ndcg_u1, 0.5);
  const double ndcg_u2 = (1 + 0.5) / (1 + 1 / std::log2(3.0));
  EXPECT_DOUBLE_EQ(r.precision, (1.0 / 3 + 1.0 / 3 + 2.0 / 3) / 3);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_NEAR(r.ndcg, (1 + ndcg_u1 + ndcg_u2) / 3, 1e-15);
  EXPECT_DOUBLE_EQ(r.hit_rate, 1.0);
  EXPECT_NEAR(r.map, (1 + 1.0 / 3 + (1 + 2.0 / 3) / 2) / 3, 1e-15);
  EXPECT_EQ(r.evaluated_users, 3u);
}

TEST(AccuracyMetrics, UsersWithoutTestItemsAreSkipped) {
  const auto r = accuracy_metrics(lists_of(2, {{0, 1}, {2, 3}}), test_of(5, {{0}, {}}));
  EXPECT_EQ(r.evaluated_users, 1u);
  EXPECT_EQ(r.skipped_users, 1u);
  EXPECT_DOUBLE_EQ(r.ndcg, 1.0);
}

// Single relevant item: nDCG = 1/log2(rank+1) and AP = 1/rank, each from its own formula.
TEST(AccuracyMetrics, SingleRelevantItemReducesToRankFormulas) {
  for (std::uint32_t rank = 1; rank <= 10; ++rank) {
    std::vector<std::uint32_t> list(10);
    for (std::uint32_t i = 0; i < 10; ++i) list[i] = 100 + i;
    list[rank - 1] = 7;
    const auto r = accuracy_metrics(lists_of(10, {list}), test_of(200, {{7}}));
    EXPECT_NEAR(r.ndcg, std::log(2.0) / std::log(rank + 1.0), 1e-15);
    EXPECT_NEAR(r.map, 1.0 / rank, 1e-15);
  }
}

TEST(AccuracyMetrics, NdcgIsOneIffTestItemsFillTheTop) {
  // two test items at ranks 1-2 vs ranks 1 and 3
  EXPECT_DOUBLE_EQ(accuracy_metrics(lists_of(4, {{3, 5, 0, 1}}), test_of(6, {{5, 3}})).ndcg, 1.0);
  EXPECT_LT(accuracy_metrics(lists_of(4, {{3, 0, 5, 1}}), test_of(6, {{5, 3}})).ndcg, 1.0);
}

struct RandomCase {
  TopNList lists;
  ImplicitDataset test;
};

RandomCase random_case(Rng& rng, std::size_t users, std::size_t catalog, std::size_t n) {
  std::vector<std::vector<std::uint32_t>> lists, truth;
  for (std::size_t u = 0; u < users; ++u) {
    std::vector<std::uint32_t> all(catalog);
    for (std::uint32_t i = 0; i < catalog; ++i) all[i] = i;
    rng.shuffle(all);
    lists.emplace_back(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
    rng.shuffle(all);
    truth.emplace_back(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(1 + rng.below(8)));
  }
  return {lists_of(n, lists), test_of(catalog, truth)};
}

TEST(AccuracyMetrics, InvariantUnderUserPermutation) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = random_case(rng, 30, 40, 10);
    const auto before = accuracy_metrics(c.lists, c.test);
    std::vector<std::size_t> perm(30);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    auto lists = c.lists;
    auto test = c.test;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      lists.lists[i] = c.lists.lists[perm[i]];
      test.relevant[i] = c.test.relevant[perm[i]];
    }
    const auto after = accuracy_metrics(lists, test);
    EXPECT_NEAR(after.precision, before.precision, 1e-12);
    EXPECT_NEAR(after.recall, before.recall, 1e-12);
    EXPECT_NEAR(after.ndcg, before.ndcg, 1e-12);
    EXPECT_NEAR(after.hit_rate, before.hit_rate, 1e-12);
    EXPECT_NEAR(after.map, before.map, 1e-12);
  }
}

TEST(AccuracyMetrics, AddingAPerfectUserNeverLowersMeans) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = random_case(rng, 10, 30, 5);
    const auto before = accuracy_metrics(c.lists, c.test);
    c.lists.lists.push_back({{2, 1.0}, {3, 0.9}, {4, 0.8}, {5, 0.7}, {6, 0.6}});
    c.test.users.push_back("extra");
    c.test.relevant.push_back({{2, 0}, {3, 0}, {4, 0}, {5, 0}, {6, 0}});
    const auto after = accuracy_metrics(c.lists, c.test);
    EXPECT_GE(after.precision, before.precision);
    EXPECT_GE(after.recall, before.recall);
    EXPECT_GE(after.ndcg, before.ndcg);
    EXPECT_GE(after.hit_rate, before.hit_rate);
  }
}

TEST(ItemCoverage, IdenticalListsCoverN) {
  std::vector<std::uint32_t> list(50);
  for (std::uint32_t i = 0; i < 50; ++i) list[i] = 3 * i;
  EXPECT_EQ(item_coverage(lists_of(50, {list, list, list})), 50u);
}

TEST(ItemCoverage, EqualsSetUnionOracle) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = random_case(rng, 1 + rng.below(20), 60, 7);
    std::set<std::uint32_t> seen;
    for (const auto& l : c.lists.lists)
      for (const auto& r : l) seen.insert(r.item);
    EXPECT_EQ(item_coverage(c.lists), seen.size());
    const auto d = diversity_metrics(c.lists, 60);
    EXPECT_EQ(d.item_coverage, seen.size());
    EXPECT_DOUBLE_EQ(d.coverage_ratio, double(seen.size()) / 60);
    EXPECT_LE(d.shannon_entropy, std::log2(double(seen.size())) + 1e-12);
  }
}

TEST(ShannonEntropy, UniformCountsGiveLogM) {
  for (std::uint32_t m : {1u, 2u, 5u, 64u, 100u}) {
    std::vector<std::vector<std::uint32_t>> rows;
    for (int rep = 0; rep < 3; ++rep) {
      std::vector<std::uint32_t> row(m);
      for (std::uint32_t i = 0; i < m; ++i) row[i] = i;
      rows.push_back(row);
    }
    EXPECT_NEAR(shannon_entropy(lists_of(m, rows)), std::log2(double(m)), 1e-12);
  }
}

TEST(ShannonEntropy, SingleItemGivesZero) {
  EXPECT_EQ(shannon_entropy(lists_of(1, {{9}, {9}, {9}})), 0.0);
}

TEST(GiniDiversity, UniformCatalogGivesOne) {
  EXPECT_NEAR(gini_diversity(lists_of(4, {{0, 1, 2, 3}, {3, 2, 1, 0}}), 4), 1.0, 1e-15);
}

TEST(GiniDiversity, SingleItemApproachesZeroAsCatalogGrows) {
  const auto lists = lists_of(1, {{0}, {0}});
  double prev = 1.0;
  for (std::size_t m : {10u, 100u, 1000u, 100000u}) {
    const double g = gini_diversity(lists, m);
    EXPECT_NEAR(g, 1.0 / double(m), 1e-12);
    EXPECT_LT(g, prev);
    prev = g;
  }
}

// Mean absolute difference form: G = sum_ij |x_i - x_j| / (2 m^2 mean).
double pairwise_gini(const std::vector<double>& x) {
  const double m = double(x.size());
  double diff = 0, total = 0;
  for (const auto a : x) {
    total += a;
    for (const auto b : x) diff += std::abs(a - b);
  }
  return diff / (2 * m * m * (total / m));
}

TEST(GiniDiversity, FourTwoTwoMatchesPairwiseOracle) {
  const auto lists = lists_of(2, {{0, 1}, {0, 2}, {0, 1}, {0, 2}});  // counts {4, 2, 2}
  EXPECT_NEAR(pairwise_gini({4, 2, 2}), 1.0 / 6, 1e-15);
  EXPECT_NEAR(gini_diversity(lists, 3), 1.0 - pairwise_gini({4, 2, 2}), 1e-15);
}

TEST(GiniDiversity, RandomCountsMatchPairwiseOracleAndIgnoreRelabeling) {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t catalog = 5 + rng.below(40);
    const auto c = random_case(rng, 1 + rng.below(30), catalog, 1 + rng.below(5));
    std::vector<double> counts(catalog, 0);
    for (const auto& l : c.lists.lists)
      for (const auto& r : l) counts[r.item] += 1;
    EXPECT_NEAR(gini_diversity(c.lists, catalog), 1.0 - pairwise_gini(counts), 1e-12);

    std::vector<std::uint32_t> relabel(catalog);
    for (std::uint32_t i = 0; i < catalog; ++i) relabel[i] = i;
    rng.shuffle(relabel);
    auto moved = c.lists;
    for (auto& l : moved.lists)
      for (auto& r : l) r.item = relabel[r.item];
    EXPECT_NEAR(gini_diversity(moved, catalog), gini_diversity(c.lists, catalog), 1e-12);
    EXPECT_NEAR(shannon_entropy(moved), shannon_entropy(c.lists), 1e-12);
  }
}

TEST(GiniDiversity, ItemOutsideCatalogThrows) {
  EXPECT_THROW(gini_diversity(lists_of(1, {{5}}), 3), std::out_of_range);
}

}  // namespace
}  // namespace fmaudit
