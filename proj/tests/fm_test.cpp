#include "fmaudit/fm.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"

namespace fmaudit {
namespace {

TEST(FmScore, ZeroParametersScoreZero) {
  const FMParameters<> p(10, 4);
  const std::vector<std::uint32_t> active{1, 5, 9};
  EXPECT_EQ(fm_score(p, active), 0.0);
}

TEST(FmScore, TwoFeatureExpansion) {
  FMParameters<> p(4, 3);
  p.w0 = 0.5;
  p.w[1] = -0.25;
  p.w[3] = 2.0;
  const double vu[] = {1, 2, 3}, vi[] = {-1, 0.5, 4};
  std::copy(std::begin(vu), std::end(vu), p.row(1).begin());
  std::copy(std::begin(vi), std::end(vi), p.row(3).begin());
  const std::vector<std::uint32_t> active{1, 3};
  EXPECT_DOUBLE_EQ(fm_score(p, active), 0.5 - 0.25 + 2.0 + (-1 + 1 + 12));
}

TEST(FmScore, OutOfRangeIndexThrows) {
  const FMParameters<> p(3, 2);
  const std::vector<std::uint32_t> active{0, 3};
  EXPECT_THROW(fm_score(p, active), std::out_of_range);
}

TEST(FmScore, FactorizedMatchesNaivePairwiseSum) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto p = testing::random_params(40, 1 + static_cast<std::uint32_t>(rng.below(16)), rng);
    const auto active = testing::random_active(p.dimension, 1 + rng.below(6), rng);
    EXPECT_NEAR(fm_score(p, active), testing::naive_fm_score(p, active), 1e-9);
  }
}

TEST(FmScore, FloatInstantiation) {
  FMParameters<float> p(3, 2);
  p.w0 = 1.f;
  p.v = {1.f, 1.f, 2.f, 2.f, 0.f, 0.f};
  const std::vector<std::uint32_t> active{0, 1};
  EXPECT_FLOAT_EQ(fm_score(p, active), 1.f + 4.f);
}

TEST(FmScore, ZeroAttributeColumnsAreNeutral) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto base = testing::random_params(20, 6, rng);
    FMParameters<> wide(base.dimension + 5, base.factors);
    wide.w0 = base.w0;
    std::copy(base.w.begin(), base.w.end(), wide.w.begin());
    std::copy(base.v.begin(), base.v.end(), wide.v.begin());
    auto active = testing::random_active(base.dimension, 3, rng);
    const double before = fm_score(base, active);
    active.push_back(base.dimension + static_cast<std::uint32_t>(rng.below(5)));
    EXPECT_NEAR(fm_score(wide, active), before, 1e-12);
  }
}

TEST(PairwiseMargin, EqualsScoreDifference) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = testing::random_params(30, 8, rng);
    const std::vector<std::uint32_t> ctx{2, 17};
    const std::uint32_t pos = 5, neg = 25;
    std::vector<std::uint32_t> a{2, 17, pos}, b{2, 17, neg};
    EXPECT_NEAR(pairwise_margin(p, ctx, pos, neg),
                testing::naive_fm_score(p, a) - testing::naive_fm_score(p, b), 1e-12);
  }
}

// Central differences on the naive objective, over every parameter of the
// triple's features.
TEST(BprGradient, MatchesCentralFiniteDifferences) {
  Rng rng(42);
  const double alpha = 0.01, beta = 0.02, h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    auto p = testing::random_params(12, 5, rng, 0.5);
    const std::vector<std::uint32_t> ctx = trial % 2 ? std::vector<std::uint32_t>{0, 11}
                                                     : std::vector<std::uint32_t>{3};
    const std::uint32_t pos = 6, neg = 8;
    PairGradient<> g;
    bpr_triple_gradient(p, std::span<const std::uint32_t>(ctx), pos, neg, alpha, beta, g);

    std::vector<double> analytic, numeric;
    for (std::size_t a = 0; a < g.features.size(); ++a) {
      const auto f = g.features[a];
      auto probe = [&](double& slot) {
        const double keep = slot;
        slot = keep + h;
        const double up = testing::naive_bpr_loss(p, ctx, pos, neg, alpha, beta);
        slot = keep - h;
        const double down = testing::naive_bpr_loss(p, ctx, pos, neg, alpha, beta);
        slot = keep;
        return (up - down) / (2 * h);
      };
      analytic.push_back(g.dw[a]);
      numeric.push_back(probe(p.w[f]));
      for (std::uint32_t t = 0; t < p.factors; ++t) {
        analytic.push_back(g.dv[a * p.factors + t]);
        numeric.push_back(probe(p.v[std::size_t(f) * p.factors + t]));
      }
    }
    EXPECT_LT(testing::relative_error(analytic, numeric), 1e-4) << "trial " << trial;
  }
}

TEST(BprLoss, LibraryLossAgreesWithNaiveObjective) {
  Rng rng(4);
  const auto p = testing::random_params(10, 3, rng, 0.3);
  const std::vector<std::uint32_t> ctx{1, 9};
  EXPECT_NEAR(bpr_triple_loss(p, std::span<const std::uint32_t>(ctx), 4, 5, 0.1, 0.2),
              testing::naive_bpr_loss(p, ctx, 4, 5, 0.1, 0.2), 1e-12);
}

TEST(Initialization, SeededUniformSmallFactors) {
  const auto a = FMParameters<>::initialize(50, 10, 7);
  EXPECT_EQ(a, FMParameters<>::initialize(50, 10, 7));
  EXPECT_NE(a, FMParameters<>::initialize(50, 10, 8));
  EXPECT_EQ(a.w0, 0.0);
  for (const auto w : a.w) EXPECT_EQ(w, 0.0);
  for (const auto x : a.v) EXPECT_LT(std::abs(x), 0.01);
}

}  // namespace
}  // namespace fmaudit
