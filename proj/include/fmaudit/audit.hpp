#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "fmaudit/common.hpp"
#include "fmaudit/splits.hpp"
#include "fmaudit/topn.hpp"

namespace fmaudit {

/// Binary item-membership rows: row u lists the catalog columns in user u's
/// Top-N list, sorted.
struct ListFeatureMatrix {
  std::size_t cols = 0;
  std::vector<std::vector<std::uint32_t>> rows;

  std::size_t size() const { return rows.size(); }

  ListFeatureMatrix subset(std::span<const std::size_t> which) const {
    ListFeatureMatrix out;
    out.cols = cols;
    out.rows.reserve(which.size());
    for (const auto r : which) out.rows.push_back(rows[r]);
    return out;
  }

  friend bool operator==(const ListFeatureMatrix&, const ListFeatureMatrix&) = default;
};

inline ListFeatureMatrix build_features(const TopNList& lists, std::size_t catalog_size) {
  ListFeatureMatrix x;
  x.cols = catalog_size;
  x.rows.reserve(lists.lists.size());
  for (const auto& list : lists.lists) {
    std::vector<std::uint32_t> row;
    row.reserve(list.size());
    for (const auto& rec : list) {
      if (rec.item >= catalog_size) {
        throw DataError("list item " + std::to_string(rec.item) + " is outside the catalog");
      }
      row.push_back(rec.item);
    }
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    x.rows.push_back(std::move(row));
  }
  return x;
}

struct ClassifierConfig {
  double l2_strength = 1.0;
  std::size_t max_iterations = 500;
  double convergence_tol = 1e-6;
  std::uint64_t seed = 0;  // the solver is deterministic; kept for report provenance
};

namespace detail {
inline std::size_t count_classes(std::span<const int> y) {
  return std::set<int>(y.begin(), y.end()).size();
}
}  // namespace detail

/// Multinomial logistic regression on binary sparse rows.
///
/// Objective (minimised):
///   (1/n) sum_r -log softmax(z_r)[y_r]  +  l2 / (2n) * ||W||^2,
///   z_r[c] = b[c] + sum_{j in row r} W[c][j].
/// The bias is not penalised. With l2 = 1 this is the usual C = 1 setting.
class LogisticRegression {
 public:
  LogisticRegression() = default;
  LogisticRegression(std::size_t classes, std::size_t features)
      : classes_(classes), features_(features), w_(classes * features, 0.0), b_(classes, 0.0) {}

  std::size_t classes() const { return classes_; }
  std::size_t features() const { return features_; }
  std::vector<double>& weights() { return w_; }
  std::vector<double>& bias() { return b_; }
  const std::vector<double>& weights() const { return w_; }
  const std::vector<double>& bias() const { return b_; }
  const std::vector<double>& loss_history() const { return history_; }

  std::vector<double> predict_proba(const std::vector<std::uint32_t>& row) const {
    std::vector<double> z(b_);
    for (std::size_t c = 0; c < classes_; ++c) {
      const double* wc = w_.data() + c * features_;
      for (const auto j : row) z[c] += wc[j];
    }
    const double m = *std::max_element(z.begin(), z.end());
    double total = 0;
    for (auto& v : z) total += (v = std::exp(v - m));
    for (auto& v : z) v /= total;
    return z;
  }

  int predict(const std::vector<std::uint32_t>& row) const {
    const auto p = predict_proba(row);
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  }

  std::vector<int> predict(const ListFeatureMatrix& x) const {
    std::vector<int> out;
    out.reserve(x.size());
    for (const auto& row : x.rows) out.push_back(predict(row));
    return out;
  }

  double objective(const ListFeatureMatrix& x, std::span<const int> y, double l2) const {
    double loss = 0;
    for (std::size_t r = 0; r < x.size(); ++r) {
      const auto p = predict_proba(x.rows[r]);
      loss -= std::log(std::max(p[static_cast<std::size_t>(y[r])], 1e-300));
    }
    double sq = 0;
    for (const auto v : w_) sq += v * v;
    const double n = static_cast<double>(x.size());
    return loss / n + l2 / (2 * n) * sq;
  }

  /// Gradient of objective() with respect to (W, b).
  void gradient(const ListFeatureMatrix& x, std::span<const int> y, double l2,
                std::vector<double>& gw, std::vector<double>& gb) const {
    const double n = static_cast<double>(x.size());
    gw.assign(w_.size(), 0.0);
    gb.assign(b_.size(), 0.0);
    for (std::size_t r = 0; r < x.size(); ++r) {
      auto p = predict_proba(x.rows[r]);
      p[static_cast<std::size_t>(y[r])] -= 1.0;
      for (std::size_t c = 0; c < classes_; ++c) {
        const double d = p[c] / n;
        gb[c] += d;
        double* g = gw.data() + c * features_;
        for (const auto j : x.rows[r]) g[j] += d;
      }
    }
    for (std::size_t i = 0; i < w_.size(); ++i) gw[i] += l2 / n * w_[i];
  }

  /// Full-batch gradient descent from zero weights with Armijo backtracking,
  /// so the objective never increases between iterations. Stops after
  /// max_iterations or when the objective changes by less than the tolerance.
  void fit(const ListFeatureMatrix& x, std::span<const int> y, const ClassifierConfig& cfg) {
    std::fill(w_.begin(), w_.end(), 0.0);
    std::fill(b_.begin(), b_.end(), 0.0);
    history_.clear();
    double loss = objective(x, y, cfg.l2_strength);
    history_.push_back(loss);
    std::vector<double> gw, gb, w0, b0;
    double step = 1.0;
    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
      gradient(x, y, cfg.l2_strength, gw, gb);
      double gnorm2 = 0;
      for (const auto g : gw) gnorm2 += g * g;
      for (const auto g : gb) gnorm2 += g * g;
      if (gnorm2 == 0) break;
      w0 = w_, b0 = b_;
      step = std::min(step * 2.0, 1e6);
      double next = loss;
      bool accepted = false;
      for (int tries = 0; tries < 60; ++tries) {
        for (std::size_t i = 0; i < w_.size(); ++i) w_[i] = w0[i] - step * gw[i];
        for (std::size_t i = 0; i < b_.size(); ++i) b_[i] = b0[i] - step * gb[i];
        next = objective(x, y, cfg.l2_strength);
        if (next <= loss - 1e-4 * step * gnorm2) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        w_ = w0, b_ = b0;
        break;
      }
      const double delta = loss - next;
      loss = next;
      history_.push_back(loss);
      if (delta < cfg.convergence_tol) break;
    }
  }

 private:
  std::size_t classes_ = 0;
  std::size_t features_ = 0;
  std::vector<double> w_;
  std::vector<double> b_;
  std::vector<double> history_;
};

/// Labels must be class indices in [0, num_classes) with at least two distinct values.
inline LogisticRegression train_logreg(const ListFeatureMatrix& x, std::span<const int> y,
                                       std::size_t num_classes, const ClassifierConfig& cfg) {
  if (x.size() != y.size()) throw std::invalid_argument("feature rows and labels differ in length");
  for (const auto c : y) {
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
      throw std::invalid_argument("label outside [0, num_classes)");
    }
  }
  if (detail::count_classes(y) < 2) {
    throw std::invalid_argument("logistic regression needs at least two classes in the labels");
  }
  LogisticRegression model(num_classes, x.cols);
  model.fit(x, y, cfg);
  return model;
}

/// Predicts the most frequent training label; ties go to the smaller label.
class MostFrequentClassifier {
 public:
  explicit MostFrequentClassifier(std::span<const int> y_train) {
    if (y_train.empty()) throw std::invalid_argument("most-frequent baseline needs labels");
    std::map<int, std::size_t> counts;
    for (const auto c : y_train) ++counts[c];
    std::size_t best = 0;
    for (const auto& [label, n] : counts) {
      if (n > best) {
        best = n;
        label_ = label;
      }
    }
  }

  int label() const { return label_; }
  std::vector<int> predict(std::size_t rows) const { return std::vector<int>(rows, label_); }

 private:
  int label_ = 0;
};

inline MostFrequentClassifier most_frequent_baseline(std::span<const int> y_train) {
  return MostFrequentClassifier(y_train);
}

/// Unweighted mean of per-class F1 over the classes in truth and predictions.
/// A class with precision + recall = 0 scores 0.
inline double macro_f1(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size()) {
    throw std::invalid_argument("macro_f1: predictions and truth differ in length");
  }
  std::map<int, std::array<std::size_t, 3>> stats;  // tp, fp, fn
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto& t = stats[truth[i]];
    auto& p = stats[predictions[i]];
    if (predictions[i] == truth[i]) {
      ++t[0];
    } else {
      ++p[1];
      ++t[2];
    }
  }
  if (stats.empty()) return 0.0;
  double sum = 0;
  for (const auto& [label, s] : stats) {
    const double tp = double(s[0]), fp = double(s[1]), fn = double(s[2]);
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    if (precision + recall > 0) sum += 2 * precision * recall / (precision + recall);
  }
  return sum / static_cast<double>(stats.size());
}

struct AuditReport {
  std::string attribute;
  double classifier_f1 = 0;
  double classifier_f1_std = 0;
  double baseline_f1 = 0;
  double baseline_f1_std = 0;
  std::vector<double> fold_classifier_f1;
  std::vector<double> fold_baseline_f1;
};

inline std::pair<double, double> mean_and_std(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0;
  for (const auto x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0;
  for (const auto x : v) var += (x - m) * (x - m);
  return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

/// For each fold: fit on the other folds, macro-F1 on the held-out one, for
/// both the classifier and the most-frequent baseline. Reports the mean and
/// population standard deviation over folds.
inline AuditReport cross_validate(const ListFeatureMatrix& x, std::span<const int> y,
                                  const FoldAssignment& folds, std::size_t num_classes,
                                  const ClassifierConfig& cfg) {
  if (folds.fold.size() != x.size() || y.size() != x.size()) {
    throw std::invalid_argument("fold assignment must cover every row");
  }
  AuditReport rep;
  for (std::size_t f = 0; f < folds.k; ++f) {
    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t r = 0; r < x.size(); ++r) {
      (folds.fold[r] == f ? test_rows : train_rows).push_back(r);
    }
    std::vector<int> y_train, y_test;
    for (const auto r : train_rows) y_train.push_back(y[r]);
    for (const auto r : test_rows) y_test.push_back(y[r]);
    if (detail::count_classes(y_train) < 2) {
      throw std::invalid_argument("fold " + std::to_string(f) +
                                  ": training part contains a single class");
    }
    const auto model = train_logreg(x.subset(train_rows), y_train, num_classes, cfg);
    const auto baseline = most_frequent_baseline(y_train);
    rep.fold_classifier_f1.push_back(macro_f1(model.predict(x.subset(test_rows)), y_test));
    rep.fold_baseline_f1.push_back(macro_f1(baseline.predict(test_rows.size()), y_test));
  }
  std::tie(rep.classifier_f1, rep.classifier_f1_std) = mean_and_std(rep.fold_classifier_f1);
  std::tie(rep.baseline_f1, rep.baseline_f1_std) = mean_and_std(rep.fold_baseline_f1);
  return rep;
}

}  // namespace fmaudit
