#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmaudit/common.hpp"

namespace fmaudit {

/// Second-order factorization machine over one-hot inputs: a global bias, one
/// weight per feature, and one latent row of `factors` values per feature.
template <typename Real = double>
struct FMParameters {
  std::uint32_t dimension = 0;
  std::uint32_t factors = 0;
  Real w0 = 0;
  std::vector<Real> w;  // [dimension]
  std::vector<Real> v;  // [dimension * factors], row-major

  FMParameters() = default;
  FMParameters(std::uint32_t dim, std::uint32_t k)
      : dimension(dim), factors(k), w(dim, Real(0)), v(std::size_t(dim) * k, Real(0)) {}

  /// w0 = 0, w = 0, latent entries uniform in (-scale, scale).
  static FMParameters initialize(std::uint32_t dim, std::uint32_t k, std::uint64_t seed,
                                 double scale = 0.01) {
    FMParameters p(dim, k);
    Rng rng(seed);
    for (auto& x : p.v) x = static_cast<Real>(rng.uniform(-scale, scale));
    return p;
  }

  std::span<Real> row(std::uint32_t i) {
    return {v.data() + std::size_t(i) * factors, factors};
  }
  std::span<const Real> row(std::uint32_t i) const {
    return {v.data() + std::size_t(i) * factors, factors};
  }

  bool all_finite() const {
    auto finite = [](Real x) { return std::isfinite(x); };
    return std::isfinite(w0) && std::all_of(w.begin(), w.end(), finite) &&
           std::all_of(v.begin(), v.end(), finite);
  }

  friend bool operator==(const FMParameters&, const FMParameters&) = default;
};

namespace detail {
template <typename Real>
void check_features(const FMParameters<Real>& p, std::span<const std::uint32_t> active) {
  for (const auto i : active) {
    if (i >= p.dimension) {
      throw std::out_of_range("feature index " + std::to_string(i) + " outside dimension " +
                              std::to_string(p.dimension));
    }
  }
}
}  // namespace detail

/// Score of a one-hot input whose active features are `active`:
///   w0 + sum_i w_i + sum_{i<j} <v_i, v_j>
/// with the pairwise part evaluated as 1/2 sum_f [(sum_i v_if)^2 - sum_i v_if^2],
/// which is O(|active| * k).
template <typename Real>
Real fm_score(const FMParameters<Real>& p, std::span<const std::uint32_t> active) {
  detail::check_features(p, active);
  Real linear = p.w0;
  for (const auto i : active) linear += p.w[i];
  Real pairwise = 0;
  for (std::uint32_t f = 0; f < p.factors; ++f) {
    Real sum = 0, sum_sq = 0;
    for (const auto i : active) {
      const Real x = p.v[std::size_t(i) * p.factors + f];
      sum += x;
      sum_sq += x * x;
    }
    pairwise += sum * sum - sum_sq;
  }
  return linear + Real(0.5) * pairwise;
}

// ---------------------------------------------------------------------------
// Pairwise ranking terms
//
// For a user context C (the user feature plus an optional attribute feature),
// a preferred item feature i and a less preferred j, the score gap is
//   x = s(C + i) - s(C + j) = w_i - w_j + <q, v_i - v_j>,   q = sum_{c in C} v_c
// Bias, context weights and context-context interactions cancel.

template <typename Real>
Real pairwise_margin(const FMParameters<Real>& p, std::span<const std::uint32_t> context,
                     std::uint32_t pos, std::uint32_t neg) {
  Real x = p.w[pos] - p.w[neg];
  const auto vi = p.row(pos);
  const auto vj = p.row(neg);
  for (std::uint32_t f = 0; f < p.factors; ++f) {
    Real q = 0;
    for (const auto c : context) q += p.v[std::size_t(c) * p.factors + f];
    x += q * (vi[f] - vj[f]);
  }
  return x;
}

/// Sparse gradient over the features of one (context, pos, neg) example.
/// Feature order: context..., pos, neg.
template <typename Real = double>
struct PairGradient {
  std::vector<std::uint32_t> features;
  std::vector<Real> dw;  // [features]
  std::vector<Real> dv;  // [features * factors]

  void apply(FMParameters<Real>& p, Real step) const {
    const std::uint32_t k = p.factors;
    for (std::size_t a = 0; a < features.size(); ++a) {
      const auto f = features[a];
      p.w[f] -= step * dw[a];
      Real* row = p.v.data() + std::size_t(f) * k;
      const Real* g = dv.data() + a * k;
      for (std::uint32_t t = 0; t < k; ++t) row[t] -= step * g[t];
    }
  }
};

/// Gradient of  loss(x) + alpha * sum w_f^2 + beta * sum ||v_f||^2  over the
/// example's features, given dloss = d loss / dx at the current parameters.
template <typename Real>
void pairwise_gradient(const FMParameters<Real>& p, std::span<const std::uint32_t> context,
                       std::uint32_t pos, std::uint32_t neg, Real dloss, Real alpha, Real beta,
                       PairGradient<Real>& out) {
  const std::uint32_t k = p.factors;
  out.features.assign(context.begin(), context.end());
  out.features.push_back(pos);
  out.features.push_back(neg);
  const std::size_t nf = out.features.size();
  out.dw.resize(nf);
  out.dv.resize(nf * k);

  const auto vi = p.row(pos);
  const auto vj = p.row(neg);
  const std::size_t ip = nf - 2, in = nf - 1;
  for (std::uint32_t f = 0; f < k; ++f) {
    Real q = 0;
    for (const auto c : context) q += p.v[std::size_t(c) * k + f];
    for (std::size_t a = 0; a < context.size(); ++a) {
      out.dv[a * k + f] = dloss * (vi[f] - vj[f]) + 2 * beta * p.v[std::size_t(context[a]) * k + f];
    }
    out.dv[ip * k + f] = dloss * q + 2 * beta * vi[f];
    out.dv[in * k + f] = -dloss * q + 2 * beta * vj[f];
  }
  for (std::size_t a = 0; a < context.size(); ++a) out.dw[a] = 2 * alpha * p.w[context[a]];
  out.dw[ip] = dloss + 2 * alpha * p.w[pos];
  out.dw[in] = -dloss + 2 * alpha * p.w[neg];
}

template <typename Real>
Real log_sigmoid(Real x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

template <typename Real>
Real sigmoid(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

template <typename Real>
Real l2_penalty(const FMParameters<Real>& p, std::span<const std::uint32_t> features, Real alpha,
                Real beta) {
  Real r = 0;
  for (const auto f : features) {
    r += alpha * p.w[f] * p.w[f];
    for (const auto x : p.row(f)) r += beta * x * x;
  }
  return r;
}

/// BPR objective for one (context, pos, neg) triple, to be minimised:
///   -ln sigmoid(x) + L2 penalties on the triple's features.
template <typename Real>
Real bpr_triple_loss(const FMParameters<Real>& p, std::span<const std::uint32_t> context,
                     std::uint32_t pos, std::uint32_t neg, Real alpha, Real beta) {
  std::vector<std::uint32_t> features(context.begin(), context.end());
  features.push_back(pos);
  features.push_back(neg);
  return -log_sigmoid(pairwise_margin(p, context, pos, neg)) +
         l2_penalty(p, features, alpha, beta);
}

template <typename Real>
void bpr_triple_gradient(const FMParameters<Real>& p, std::span<const std::uint32_t> context,
                         std::uint32_t pos, std::uint32_t neg, Real alpha, Real beta,
                         PairGradient<Real>& out) {
  const Real x = pairwise_margin(p, context, pos, neg);
  // d/dx [-ln sigmoid(x)] = -sigmoid(-x)
  pairwise_gradient(p, context, pos, neg, -sigmoid(-x), alpha, beta, out);
}

}  // namespace fmaudit
