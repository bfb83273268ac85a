#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fmaudit/common.hpp"
#include "fmaudit/corpus.hpp"

namespace fmaudit {

struct Recommendation {
  std::uint32_t item = 0;
  double score = 0;

  friend bool operator==(const Recommendation&, const Recommendation&) = default;
};

/// Per-user ranked lists, indexed by user index of the dataset they were built
/// from. Scores are non-increasing within a list; equal scores are ordered by item.
struct TopNList {
  std::size_t n = 0;
  std::vector<std::vector<Recommendation>> lists;

  friend bool operator==(const TopNList&, const TopNList&) = default;
};

/// Top `n` of `scores`, skipping entries where `excluded` is set. Ordered by
/// score descending, then item index ascending.
inline std::vector<Recommendation> top_n_from_scores(std::span<const double> scores,
                                                     std::span<const std::uint8_t> excluded,
                                                     std::size_t n) {
  std::vector<std::uint32_t> candidates;
  candidates.reserve(scores.size());
  for (std::uint32_t i = 0; i < scores.size(); ++i) {
    if (excluded.empty() || !excluded[i]) candidates.push_back(i);
  }
  const auto better = [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  };
  const std::size_t m = std::min(n, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(m),
                    candidates.end(), better);
  std::vector<Recommendation> out;
  out.reserve(m);
  for (std::size_t r = 0; r < m; ++r) out.push_back({candidates[r], scores[candidates[r]]});
  return out;
}

// topn.tsv: "# fmaudit topn v1 n=<n>", then rows  user \t rank \t item \t score
// with 1-based ranks.
inline void write_topn(std::ostream& out, const TopNList& t, const ImplicitDataset& ids) {
  out << "# fmaudit topn v1 n=" << t.n << '\n';
  for (std::size_t u = 0; u < t.lists.size(); ++u) {
    for (std::size_t r = 0; r < t.lists[u].size(); ++r) {
      const auto& rec = t.lists[u][r];
      out << ids.users[u] << '\t' << (r + 1) << '\t' << ids.items[rec.item] << '\t'
          << text::format_exact(rec.score) << '\n';
    }
  }
}

inline TopNList read_topn(std::istream& in, const ImplicitDataset& ids) {
  TopNList t;
  t.lists.resize(ids.users.size());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("n=");
      if (pos != std::string::npos) text::parse_number(std::string_view(line).substr(pos + 2), t.n);
      continue;
    }
    const auto f = text::split(line, "\t");
    std::size_t rank = 0;
    Recommendation rec;
    if (f.size() != 4 || !text::parse_number(f[1], rank) || !text::parse_number(f[3], rec.score)) {
      throw DataError("line " + std::to_string(line_no) + ": bad top-n row");
    }
    const auto u = ids.user_index(f[0]);
    const auto i = ids.item_index(f[2]);
    if (!u) throw DataError("line " + std::to_string(line_no) + ": unknown user '" + std::string(f[0]) + "'");
    if (!i) {
      throw DataError("line " + std::to_string(line_no) + ": item '" + std::string(f[2]) +
                      "' is not in the catalog");
    }
    rec.item = *i;
    auto& list = t.lists[*u];
    if (rank != list.size() + 1) {
      throw DataError("line " + std::to_string(line_no) + ": ranks must be consecutive per user");
    }
    list.push_back(rec);
  }
  return t;
}

}  // namespace fmaudit
