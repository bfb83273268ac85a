#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fmaudit/common.hpp"
#include "fmaudit/corpus.hpp"

namespace fmaudit {

/// Three views over the same users and catalog. For each user the test part
/// holds the most recent events, validation the next most recent, train the rest.
struct TemporalSplit {
  ImplicitDataset train;
  ImplicitDataset validation;
  ImplicitDataset test;

  friend bool operator==(const TemporalSplit&, const TemporalSplit&) = default;
};

// round-half-up of n * frac, at least 1
inline std::size_t split_part_size(std::size_t n, double frac) {
  const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(n) * frac));
  return std::max<std::size_t>(k, 1);
}

inline TemporalSplit temporal_split(const ImplicitDataset& ds, double test_frac = 0.1,
                                    double val_frac = 0.1) {
  if (!(test_frac > 0 && val_frac > 0 && test_frac + val_frac < 1)) {
    throw ConfigError("split fractions must be positive and sum to less than 1");
  }
  TemporalSplit s;
  for (auto* part : {&s.train, &s.validation, &s.test}) {
    part->users = ds.users;
    part->items = ds.items;
    part->relevant.resize(ds.users.size());
  }
  for (std::size_t u = 0; u < ds.users.size(); ++u) {
    auto seq = ds.relevant[u];
    ImplicitDataset::sort_events(seq);
    const std::size_t n = seq.size();
    const std::size_t n_test = split_part_size(n, test_frac);
    const std::size_t n_val = split_part_size(n, val_frac);
    if (n_test + n_val >= n) {
      throw DataError("user '" + ds.users[u] + "' has " + std::to_string(n) +
                      " items, too few for non-empty train/validation/test parts");
    }
    const std::size_t n_train = n - n_test - n_val;
    s.train.relevant[u].assign(seq.begin(), seq.begin() + n_train);
    s.validation.relevant[u].assign(seq.begin() + n_train, seq.begin() + n_train + n_val);
    s.test.relevant[u].assign(seq.begin() + n_train + n_val, seq.end());
  }
  return s;
}

// split.tsv: "# fmaudit split v1", then rows  user \t item \t timestamp \t part
// with part one of train, validation, test.
inline void write_split(std::ostream& out, const TemporalSplit& s) {
  out << "# fmaudit split v1\n";
  const std::pair<const char*, const ImplicitDataset*> parts[] = {
      {"train", &s.train}, {"validation", &s.validation}, {"test", &s.test}};
  for (std::size_t u = 0; u < s.train.users.size(); ++u) {
    for (const auto& [name, part] : parts) {
      for (const auto& e : part->relevant[u]) {
        out << part->users[u] << '\t' << part->items[e.item] << '\t' << e.timestamp << '\t'
            << name << '\n';
      }
    }
  }
}

inline TemporalSplit read_split(std::istream& in) {
  struct Row {
    std::string user, item, part;
    std::int64_t ts;
  };
  std::vector<Row> rows;
  std::map<std::string, std::map<std::string, std::int64_t>> all;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto f = text::split(line, "\t");
    Row r;
    if (f.size() != 4 || !text::parse_number(f[2], r.ts)) {
      throw DataError("line " + std::to_string(line_no) + ": bad split row");
    }
    r.user = f[0], r.item = f[1], r.part = f[3];
    if (r.part != "train" && r.part != "validation" && r.part != "test") {
      throw DataError("line " + std::to_string(line_no) + ": unknown part '" + r.part + "'");
    }
    all[r.user][r.item] = r.ts;
    rows.push_back(std::move(r));
  }
  const auto full = ImplicitDataset::from_pairs(all);
  TemporalSplit s;
  for (auto* part : {&s.train, &s.validation, &s.test}) {
    part->users = full.users;
    part->items = full.items;
    part->relevant.resize(full.users.size());
  }
  for (const auto& r : rows) {
    auto& part = r.part == "train" ? s.train : r.part == "validation" ? s.validation : s.test;
    part.relevant[*full.user_index(r.user)].push_back({*full.item_index(r.item), r.ts});
  }
  for (auto* part : {&s.train, &s.validation, &s.test}) {
    for (auto& seq : part->relevant) ImplicitDataset::sort_events(seq);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Stratified folds

struct FoldAssignment {
  std::size_t k = 0;
  std::vector<std::size_t> fold;  // per row

  std::vector<std::size_t> rows_in(std::size_t f) const {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < fold.size(); ++r) {
      if (fold[r] == f) out.push_back(r);
    }
    return out;
  }

  friend bool operator==(const FoldAssignment&, const FoldAssignment&) = default;
};

/// Shuffles the rows of each class with a seeded generator, concatenates the
/// classes in label order, and deals the sequence round-robin over k folds.
/// Fold sizes and per-class counts per fold each differ by at most one.
inline FoldAssignment stratified_kfold(std::span<const int> labels, std::size_t k,
                                       std::uint64_t seed) {
  if (k < 2) throw ConfigError("stratified_kfold needs k >= 2");
  if (k > labels.size()) {
    throw ConfigError("k = " + std::to_string(k) + " exceeds the number of rows (" +
                      std::to_string(labels.size()) + ")");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t r = 0; r < labels.size(); ++r) by_class[labels[r]].push_back(r);

  Rng rng(seed);
  FoldAssignment out;
  out.k = k;
  out.fold.assign(labels.size(), 0);
  std::size_t next = 0;
  for (auto& [label, rows] : by_class) {
    rng.shuffle(rows);
    for (const auto r : rows) out.fold[r] = next++ % k;
  }
  return out;
}

}  // namespace fmaudit
