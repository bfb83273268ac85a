#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "fmaudit/common.hpp"
#include "fmaudit/corpus.hpp"
#include "fmaudit/fm.hpp"
#include "fmaudit/metrics.hpp"
#include "fmaudit/splits.hpp"
#include "fmaudit/topn.hpp"

namespace fmaudit {

enum class Loss { bpr, warp };

inline std::string_view to_string(Loss l) { return l == Loss::bpr ? "bpr" : "warp"; }

inline Loss parse_loss(std::string_view s) {
  if (s == "bpr") return Loss::bpr;
  if (s == "warp") return Loss::warp;
  throw ConfigError("unknown loss '" + std::string(s) + "'");
}

inline constexpr double kWarpMargin = 1.0;

struct TrainConfig {
  Loss loss = Loss::warp;
  double learning_rate = 0.05;
  std::size_t epochs = 50;
  std::size_t factors = 50;
  double reg_weights = 0.01;  // alpha
  double reg_factors = 0.01;  // beta
  std::uint64_t seed = 42;
  std::size_t max_warp_trials = 50;
  std::size_t batch_size = 1;

  std::string describe() const {
    std::ostringstream os;
    os << "loss=" << to_string(loss) << " lr=" << text::format_exact(learning_rate)
       << " epochs=" << epochs << " k=" << factors << " alpha=" << text::format_exact(reg_weights)
       << " beta=" << text::format_exact(reg_factors) << " seed=" << seed
       << " max_warp_trials=" << max_warp_trials << " batch=" << batch_size;
    return os.str();
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Thrown when a parameter becomes NaN or infinite during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Training

namespace detail {

class TrainingSet {
 public:
  TrainingSet(const ImplicitDataset& train, const FeatureEncoding& enc)
      : enc_(enc), num_items_(static_cast<std::uint32_t>(train.items.size())) {
    if (enc.num_users != train.users.size() || enc.num_items != train.items.size()) {
      throw ConfigError("feature encoding does not match the training data");
    }
    positive_.assign(std::size_t(enc.num_users) * num_items_, 0);
    positive_count_.assign(enc.num_users, 0);
    contexts_.reserve(enc.num_users);
    for (std::uint32_t u = 0; u < enc.num_users; ++u) {
      contexts_.push_back(enc.context(u));
      for (const auto& e : train.relevant[u]) {
        if (!positive_[std::size_t(u) * num_items_ + e.item]) {
          positive_[std::size_t(u) * num_items_ + e.item] = 1;
          ++positive_count_[u];
          pairs_.push_back({u, e.item});
        }
      }
    }
    if (pairs_.empty()) throw DataError("training set is empty");
  }

  const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs() const { return pairs_; }
  std::span<const std::uint32_t> context(std::uint32_t u) const { return contexts_[u]; }
  std::uint32_t num_items() const { return num_items_; }
  bool has_negative(std::uint32_t u) const { return positive_count_[u] < num_items_; }

  // Uniform over items the user has no training interaction with.
  std::uint32_t sample_negative(std::uint32_t u, Rng& rng) const {
    const std::uint8_t* row = positive_.data() + std::size_t(u) * num_items_;
    while (true) {
      const auto j = static_cast<std::uint32_t>(rng.below(num_items_));
      if (!row[j]) return j;
    }
  }

 private:
  FeatureEncoding enc_;
  std::uint32_t num_items_;
  std::vector<std::uint8_t> positive_;
  std::vector<std::uint32_t> positive_count_;
  std::vector<std::vector<std::uint32_t>> contexts_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs_;
};

// Partial score used to compare items for a fixed context: w_i + <q, v_i>.
// Four fixed accumulators: a deterministic summation order the compiler can vectorize.
inline double item_affinity(const FMParameters<>& p, std::span<const double> q, std::uint32_t feat) {
  const double* row = p.v.data() + std::size_t(feat) * p.factors;
  const double* qq = q.data();
  const std::uint32_t k = p.factors, k4 = k & ~3u;
  double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
  for (std::uint32_t f = 0; f < k4; f += 4) {
    a0 += qq[f] * row[f];
    a1 += qq[f + 1] * row[f + 1];
    a2 += qq[f + 2] * row[f + 2];
    a3 += qq[f + 3] * row[f + 3];
  }
  for (std::uint32_t f = k4; f < k; ++f) a0 += qq[f] * row[f];
  return p.w[feat] + ((a0 + a1) + (a2 + a3));
}

inline void context_sum(const FMParameters<>& p, std::span<const std::uint32_t> ctx,
                        std::vector<double>& q) {
  q.assign(p.factors, 0.0);
  for (const auto c : ctx) {
    const auto r = p.row(c);
    for (std::uint32_t f = 0; f < p.factors; ++f) q[f] += r[f];
  }
}

}  // namespace detail

/// Harmonic rank weight L(r) = sum_{m=1..r} 1/m, with L(0) = 0.
inline double warp_rank_weight(std::size_t r) {
  double s = 0;
  for (std::size_t m = 1; m <= r; ++m) s += 1.0 / static_cast<double>(m);
  return s;
}

/// Estimated rank of a positive when the first margin violation needed
/// `trials` draws: floor((catalog - 1) / trials).
inline std::size_t warp_rank_estimate(std::size_t catalog_size, std::size_t trials) {
  return catalog_size > 0 ? (catalog_size - 1) / trials : 0;
}

using EpochCallback = std::function<void(std::size_t epoch, const FMParameters<>&)>;

/// Trains an FM with the configured pairwise loss by SGD. Each epoch visits every
/// training positive once in a seeded shuffled order. `on_epoch` is called after
/// each completed epoch. Training for E epochs yields exactly the parameters that
/// a longer run with the same config holds after its E-th epoch.
inline FMParameters<> train_fm(const TemporalSplit& split, const FeatureEncoding& enc,
                               const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (cfg.factors == 0) throw ConfigError("factors must be positive");
  if (cfg.learning_rate < 0) throw ConfigError("learning rate must be non-negative");
  if (cfg.loss == Loss::warp && cfg.max_warp_trials == 0) {
    throw ConfigError("max_warp_trials must be positive");
  }
  const detail::TrainingSet data(split.train, enc);
  Rng rng(cfg.seed);
  auto params = FMParameters<>::initialize(enc.dimension, static_cast<std::uint32_t>(cfg.factors),
                                           rng.next());

  const std::size_t catalog = data.num_items();
  std::vector<double> harmonic(catalog + 1, 0.0);
  for (std::size_t r = 1; r <= catalog; ++r) harmonic[r] = harmonic[r - 1] + 1.0 / double(r);

  const std::size_t batch = std::max<std::size_t>(cfg.batch_size, 1);
  std::vector<PairGradient<>> pending(batch);
  std::size_t pending_count = 0;
  auto flush = [&] {
    for (std::size_t b = 0; b < pending_count; ++b) {
      pending[b].apply(params, cfg.learning_rate / static_cast<double>(batch));
    }
    pending_count = 0;
  };

  std::vector<std::size_t> order(data.pairs().size());
  std::vector<double> q;
  const double alpha = cfg.reg_weights, beta = cfg.reg_factors;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (const auto idx : order) {
      const auto [u, item] = data.pairs()[idx];
      if (!data.has_negative(u)) continue;
      const auto ctx = data.context(u);
      const auto pos = enc.item_feature(item);
      auto& grad = pending[pending_count];
      if (cfg.loss == Loss::bpr) {
        const auto neg = enc.item_feature(data.sample_negative(u, rng));
        bpr_triple_gradient(params, ctx, pos, neg, alpha, beta, grad);
      } else {
        detail::context_sum(params, ctx, q);
        const double s_pos = detail::item_affinity(params, q, pos);
        // finite parameters whose products overflow
        if (!std::isfinite(s_pos)) {
          throw DivergenceError("training diverged in epoch " + std::to_string(epoch) +
                                ": non-finite score (" + cfg.describe() + ")");
        }
        bool violated = false;
        std::uint32_t neg = 0;
        std::size_t trials = 0;
        while (trials < cfg.max_warp_trials) {
          ++trials;
          neg = enc.item_feature(data.sample_negative(u, rng));
          const double s_neg = detail::item_affinity(params, q, neg);
          if (std::isnan(s_neg)) {
            throw DivergenceError("training diverged in epoch " + std::to_string(epoch) +
                                  ": non-finite score (" + cfg.describe() + ")");
          }
          if (s_neg > s_pos - kWarpMargin) {
            violated = true;
            break;
          }
        }
        if (!violated) continue;
        // hinge L(r) * (margin - x): d/dx = -L(r)
        const double weight = harmonic[warp_rank_estimate(catalog, trials)];
        pairwise_gradient(params, ctx, pos, neg, -weight, alpha, beta, grad);
      }
      if (++pending_count == batch) flush();
    }
    flush();
    if (!params.all_finite()) {
      throw DivergenceError("training diverged in epoch " + std::to_string(epoch) + " (" +
                            cfg.describe() + ")");
    }
    if (on_epoch) on_epoch(epoch, params);
  }
  return params;
}

inline FMParameters<> train_bpr(const TemporalSplit& split, const FeatureEncoding& enc,
                                const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (cfg.loss != Loss::bpr) throw ConfigError("train_bpr requires loss=bpr");
  return train_fm(split, enc, cfg, on_epoch);
}

inline FMParameters<> train_warp(const TemporalSplit& split, const FeatureEncoding& enc,
                                 const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (cfg.loss != Loss::warp) throw ConfigError("train_warp requires loss=warp");
  return train_fm(split, enc, cfg, on_epoch);
}

/// Users and items only, no attribute columns.
inline FeatureEncoding mf_encoding(const ImplicitDataset& ds) {
  return encode_features(ds, AttributeTable{}, std::nullopt);
}

/// BPR matrix factorization: the FM with BPR loss on a user+item encoding.
inline FMParameters<> train_bprmf(const TemporalSplit& split, TrainConfig cfg,
                                  const EpochCallback& on_epoch = {}) {
  cfg.loss = Loss::bpr;
  return train_fm(split, mf_encoding(split.train), cfg, on_epoch);
}

// ---------------------------------------------------------------------------
// Ranking

/// Top-n items per user by FM score, skipping items in any of `exclude`.
inline TopNList rank_items(const FMParameters<>& p, const FeatureEncoding& enc,
                           std::span<const ImplicitDataset* const> exclude, std::size_t n) {
  TopNList out;
  out.n = n;
  out.lists.resize(enc.num_users);
  std::vector<double> scores(enc.num_items), q;
  std::vector<std::uint8_t> excluded(enc.num_items);
  for (std::uint32_t u = 0; u < enc.num_users; ++u) {
    const auto ctx = enc.context(u);
    // part of the score shared by every item for this user
    const double base = fm_score(p, ctx);
    detail::context_sum(p, ctx, q);
    for (std::uint32_t i = 0; i < enc.num_items; ++i) {
      scores[i] = base + detail::item_affinity(p, q, enc.item_feature(i));
    }
    std::fill(excluded.begin(), excluded.end(), 0);
    for (const auto* part : exclude) {
      for (const auto& e : part->relevant[u]) excluded[e.item] = 1;
    }
    out.lists[u] = top_n_from_scores(scores, excluded, n);
  }
  return out;
}

/// Candidates exclude the user's train and validation positives.
inline TopNList recommend_topn(const FMParameters<>& p, const TemporalSplit& split,
                               const FeatureEncoding& enc, std::size_t n) {
  const ImplicitDataset* exclude[] = {&split.train, &split.validation};
  return rank_items(p, enc, exclude, n);
}

/// MAP@n on the validation part, ranking everything except train positives.
inline double validation_map(const FMParameters<>& p, const TemporalSplit& split,
                             const FeatureEncoding& enc, std::size_t n) {
  const ImplicitDataset* exclude[] = {&split.train};
  return accuracy_metrics(rank_items(p, enc, exclude, n), split.validation).map;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridPoint {
  TrainConfig config;
  double map = 0;
  bool diverged = false;
};

struct GridResult {
  TrainConfig best;
  FMParameters<> params;
  double best_map = 0;
  std::vector<GridPoint> evaluated;  // in grid order
};

/// Cartesian lattice over learning rate, epochs and factors around `base`.
inline std::vector<TrainConfig> make_grid(const TrainConfig& base, std::span<const double> lrs,
                                          std::span<const std::size_t> epochs,
                                          std::span<const std::size_t> factors) {
  std::vector<TrainConfig> grid;
  for (const auto lr : lrs)
    for (const auto e : epochs)
      for (const auto k : factors) {
        auto c = base;
        c.learning_rate = lr;
        c.epochs = e;
        c.factors = k;
        grid.push_back(c);
      }
  return grid;
}

namespace detail {
// true if a should win over b when MAP ties: smaller k, then smaller lr, then fewer epochs
inline bool prefer_on_tie(const TrainConfig& a, const TrainConfig& b) {
  return std::tie(a.factors, a.learning_rate, a.epochs) < std::tie(b.factors, b.learning_rate, b.epochs);
}
}  // namespace detail

/// Trains every config on the train part, scores MAP@n on validation and
/// returns the best. Configs that differ only in epoch count share one training
/// run, evaluated after each requested epoch. Diverging configs are recorded
/// and never selected. Independent runs are spread over `threads` workers
/// (0 = hardware concurrency); the result does not depend on the thread count.
inline GridResult grid_search(const TemporalSplit& split, const FeatureEncoding& enc,
                              std::span<const TrainConfig> grid, std::size_t n = 50,
                              std::size_t threads = 1) {
  if (grid.empty()) throw ConfigError("grid_search needs at least one config");
  GridResult result;
  result.evaluated.resize(grid.size());

  // group by everything except epochs
  std::map<std::string, std::vector<std::size_t>> by_key;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    auto key = grid[g];
    key.epochs = 0;
    by_key[key.describe()].push_back(g);
  }
  std::vector<std::vector<std::size_t>> groups;
  for (auto& [key, members] : by_key) {
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return std::tie(grid[a].epochs, a) < std::tie(grid[b].epochs, b);
    });
    groups.push_back(members);
  }

  const auto better = [&](std::size_t a, std::size_t b) {
    const auto& pa = result.evaluated[a];
    const auto& pb = result.evaluated[b];
    if (pa.map != pb.map) return pa.map > pb.map;
    if (detail::prefer_on_tie(pa.config, pb.config)) return true;
    if (detail::prefer_on_tie(pb.config, pa.config)) return false;
    return a < b;
  };

  struct GroupBest {
    std::optional<std::size_t> index;
    FMParameters<> params;
  };
  std::vector<GroupBest> bests(groups.size());

  auto run_group = [&](std::size_t gi) {
    const auto& members = groups[gi];
    auto& gb = bests[gi];
    auto cfg = grid[members.front()];
    cfg.epochs = grid[members.back()].epochs;
    std::size_t next = 0;
    auto evaluate_at = [&](std::size_t epoch, const FMParameters<>& params) {
      while (next < members.size() && grid[members[next]].epochs == epoch) {
        const auto g = members[next++];
        result.evaluated[g] = {grid[g], validation_map(params, split, enc, n), false};
        if (!gb.index || better(g, *gb.index)) {
          gb.index = g;
          gb.params = params;
        }
      }
    };
    try {
      // zero-epoch configs are scored on the initialization
      if (grid[members.front()].epochs == 0) {
        auto c0 = cfg;
        c0.epochs = 0;
        evaluate_at(0, train_fm(split, enc, c0));
      }
      train_fm(split, enc, cfg, evaluate_at);
    } catch (const DivergenceError&) {
      for (; next < members.size(); ++next) {
        const auto g = members[next];
        result.evaluated[g] = {grid[g], std::numeric_limits<double>::quiet_NaN(), true};
      }
    }
  };

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, groups.size());
  if (threads <= 1) {
    for (std::size_t gi = 0; gi < groups.size(); ++gi) run_group(gi);
  } else {
    std::atomic<std::size_t> cursor{0};
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t gi; (gi = cursor.fetch_add(1)) < groups.size();) run_group(gi);
        } catch (...) {
          errors[t] = std::current_exception();
          cursor = groups.size();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::optional<std::size_t> best_group;
  for (std::size_t gi = 0; gi < bests.size(); ++gi) {
    if (!bests[gi].index) continue;
    if (!best_group || better(*bests[gi].index, *bests[*best_group].index)) best_group = gi;
  }
  if (!best_group) throw DivergenceError("every grid configuration diverged");
  const auto best = *bests[*best_group].index;
  result.best = grid[best];
  result.best_map = result.evaluated[best].map;
  result.params = std::move(bests[*best_group].params);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   # fmaudit fm-checkpoint v1
//   dimension <d>
//   factors <k>
//   seed <s>
//   config <TrainConfig::describe()>
//   w0 <value>
//   w <index> <value>                      one line per feature
//   v <index> <value_1> ... <value_k>      one line per feature
// Fields are tab-separated; values use shortest round-trip text.

inline void write_checkpoint(std::ostream& out, const FMParameters<>& p, const TrainConfig& cfg) {
  out << "# fmaudit fm-checkpoint v1\n";
  out << "dimension\t" << p.dimension << "\nfactors\t" << p.factors << "\nseed\t" << cfg.seed
      << "\nconfig\t" << cfg.describe() << "\nw0\t" << text::format_exact(p.w0) << '\n';
  for (std::uint32_t i = 0; i < p.dimension; ++i) {
    out << "w\t" << i << '\t' << text::format_exact(p.w[i]) << '\n';
  }
  for (std::uint32_t i = 0; i < p.dimension; ++i) {
    out << "v\t" << i;
    for (const auto x : p.row(i)) out << '\t' << text::format_exact(x);
    out << '\n';
  }
}

inline FMParameters<> read_checkpoint(std::istream& in) {
  std::string line;
  std::uint32_t dim = 0, k = 0;
  FMParameters<> p;
  bool sized = false;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw DataError("checkpoint line " + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto f = text::split(line, "\t");
    const auto tag = f[0];
    if (tag == "dimension") {
      if (f.size() != 2 || !text::parse_number(f[1], dim)) fail("bad dimension");
    } else if (tag == "factors") {
      if (f.size() != 2 || !text::parse_number(f[1], k)) fail("bad factors");
    } else if (tag == "seed" || tag == "config") {
      continue;
    } else {
      if (!sized) {
        p = FMParameters<>(dim, k);
        sized = true;
      }
      if (tag == "w0") {
        if (f.size() != 2 || !text::parse_number(f[1], p.w0)) fail("bad w0");
      } else if (tag == "w") {
        std::uint32_t i = 0;
        if (f.size() != 3 || !text::parse_number(f[1], i) || i >= dim ||
            !text::parse_number(f[2], p.w[i])) {
          fail("bad weight row");
        }
      } else if (tag == "v") {
        std::uint32_t i = 0;
        if (f.size() != std::size_t(k) + 2 || !text::parse_number(f[1], i) || i >= dim) {
          fail("bad factor row");
        }
        auto row = p.row(i);
        for (std::uint32_t t = 0; t < k; ++t) {
          if (!text::parse_number(f[t + 2], row[t])) fail("bad factor value");
        }
      } else {
        fail("unknown tag '" + std::string(tag) + "'");
      }
    }
  }
  if (!sized) p = FMParameters<>(dim, k);
  return p;
}

}  // namespace fmaudit
