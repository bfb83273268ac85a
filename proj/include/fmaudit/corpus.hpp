#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fmaudit/common.hpp"

namespace fmaudit {

inline constexpr std::string_view kUnknownCategory = "unknown";
inline constexpr std::string_view kOtherCategory = "other";

// ---------------------------------------------------------------------------
// Raw logs

enum class RatingFormat { movielens_100k, movielens_1m };

inline RatingFormat parse_rating_format(std::string_view name) {
  if (name == "movielens-100k" || name == "ml100k") return RatingFormat::movielens_100k;
  if (name == "movielens-1m" || name == "ml1m") return RatingFormat::movielens_1m;
  throw ConfigError("unknown rating log format '" + std::string(name) + "'");
}

enum class LogKind { rating, listening };

/// One user-item event. `value` is the 1-5 rating for rating logs and the
/// number of collapsed play events for listening logs.
struct Interaction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;
  int value = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

struct InteractionLog {
  LogKind kind = LogKind::rating;
  std::vector<Interaction> events;
};

// ---------------------------------------------------------------------------
// Attributes

/// One categorical user attribute. Categories are kept sorted so the index of a
/// category is stable for a given set of observed values.
struct Attribute {
  std::vector<std::string> vocabulary;
  std::map<std::string, std::uint32_t> category;  // user id -> vocabulary index

  static Attribute from_values(const std::map<std::string, std::string>& values) {
    Attribute a;
    std::set<std::string> seen;
    for (const auto& [user, v] : values) seen.insert(v);
    a.vocabulary.assign(seen.begin(), seen.end());
    for (const auto& [user, v] : values) {
      const auto it = std::lower_bound(a.vocabulary.begin(), a.vocabulary.end(), v);
      a.category.emplace(user, static_cast<std::uint32_t>(it - a.vocabulary.begin()));
    }
    return a;
  }

  std::optional<std::string_view> value_of(const std::string& user) const {
    const auto it = category.find(user);
    if (it == category.end()) return std::nullopt;
    return vocabulary[it->second];
  }

  std::map<std::string, std::string> values() const {
    std::map<std::string, std::string> out;
    for (const auto& [user, idx] : category) out.emplace(user, vocabulary[idx]);
    return out;
  }
};

struct AttributeTable {
  std::map<std::string, Attribute> attributes;

  bool contains(const std::string& name) const { return attributes.count(name) != 0; }

  const Attribute& at(const std::string& name) const {
    const auto it = attributes.find(name);
    if (it == attributes.end()) throw ConfigError("unknown attribute '" + name + "'");
    return it->second;
  }
};

struct LoadedCorpus {
  InteractionLog log;
  AttributeTable attributes;
};

// ---------------------------------------------------------------------------
// Implicit dataset

struct Event {
  std::uint32_t item = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Users and items are sorted lexicographically by id, and indices refer to
/// those orders. `relevant[u]` is ordered by (timestamp, item).
struct ImplicitDataset {
  std::vector<std::string> users;
  std::vector<std::string> items;
  std::vector<std::vector<Event>> relevant;

  std::size_t interaction_count() const {
    std::size_t n = 0;
    for (const auto& r : relevant) n += r.size();
    return n;
  }

  std::optional<std::uint32_t> user_index(std::string_view id) const { return find(users, id); }
  std::optional<std::uint32_t> item_index(std::string_view id) const { return find(items, id); }

  /// Builds a dataset from user -> (item -> timestamp). Users with no items are
  /// dropped and the catalog is the set of items that occur.
  static ImplicitDataset from_pairs(
      const std::map<std::string, std::map<std::string, std::int64_t>>& pairs) {
    std::set<std::string> item_set;
    ImplicitDataset ds;
    for (const auto& [user, row] : pairs) {
      if (row.empty()) continue;
      ds.users.push_back(user);
      for (const auto& [item, ts] : row) item_set.insert(item);
    }
    ds.items.assign(item_set.begin(), item_set.end());
    ds.relevant.resize(ds.users.size());
    for (std::size_t u = 0; u < ds.users.size(); ++u) {
      auto& seq = ds.relevant[u];
      for (const auto& [item, ts] : pairs.at(ds.users[u])) {
        seq.push_back({*ds.item_index(item), ts});
      }
      sort_events(seq);
    }
    return ds;
  }

  std::map<std::string, std::map<std::string, std::int64_t>> to_pairs() const {
    std::map<std::string, std::map<std::string, std::int64_t>> out;
    for (std::size_t u = 0; u < users.size(); ++u) {
      auto& row = out[users[u]];
      for (const auto& e : relevant[u]) row.emplace(items[e.item], e.timestamp);
    }
    return out;
  }

  static void sort_events(std::vector<Event>& seq) {
    std::sort(seq.begin(), seq.end(), [](const Event& a, const Event& b) {
      return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.item < b.item;
    });
  }

  friend bool operator==(const ImplicitDataset& a, const ImplicitDataset& b) {
    return a.users == b.users && a.items == b.items && a.relevant == b.relevant;
  }

 private:
  static std::optional<std::uint32_t> find(const std::vector<std::string>& sorted,
                                           std::string_view id) {
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), id);
    if (it == sorted.end() || *it != id) return std::nullopt;
    return static_cast<std::uint32_t>(it - sorted.begin());
  }
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

[[noreturn]] inline void bad_line(std::size_t line_no, const std::string& what) {
  throw DataError("line " + std::to_string(line_no) + ": " + what);
}

inline std::string_view rating_delimiter(RatingFormat f) {
  return f == RatingFormat::movielens_100k ? std::string_view("\t") : std::string_view("::");
}

inline std::string_view user_delimiter(RatingFormat f) {
  return f == RatingFormat::movielens_100k ? std::string_view("|") : std::string_view("::");
}

// Seconds since epoch for "YYYY-MM-DDTHH:MM:SSZ".
inline std::optional<std::int64_t> parse_iso8601(std::string_view s) {
  s = text::trim(s);
  if (s.size() < 19 || s[4] != '-' || s[7] != '-' || s[10] != 'T' || s[13] != ':' ||
      s[16] != ':') {
    return std::nullopt;
  }
  int y, mo, d, h, mi, sec;
  if (!text::parse_number(s.substr(0, 4), y) || !text::parse_number(s.substr(5, 2), mo) ||
      !text::parse_number(s.substr(8, 2), d) || !text::parse_number(s.substr(11, 2), h) ||
      !text::parse_number(s.substr(14, 2), mi) || !text::parse_number(s.substr(17, 2), sec)) {
    return std::nullopt;
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                           day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + sec;
}

inline std::ifstream open_or_throw(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  return in;
}

}  // namespace detail

/// Parses rating rows (user, item, rating, timestamp). Blank lines are skipped.
inline std::vector<Interaction> parse_rating_lines(std::istream& in, RatingFormat format) {
  const auto delim = detail::rating_delimiter(format);
  std::vector<Interaction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(text::trim(line), delim);
    if (f.size() != 4) detail::bad_line(line_no, "expected 4 fields, got " + std::to_string(f.size()));
    Interaction x;
    x.user = std::string(text::trim(f[0]));
    x.item = std::string(text::trim(f[1]));
    if (x.user.empty() || x.item.empty()) detail::bad_line(line_no, "empty user or item id");
    if (!text::parse_number(f[2], x.value) || x.value < 1 || x.value > 5) {
      detail::bad_line(line_no, "rating must be an integer in 1..5");
    }
    if (!text::parse_number(f[3], x.timestamp) || x.timestamp < 0) {
      detail::bad_line(line_no, "timestamp must be a non-negative integer");
    }
    out.push_back(std::move(x));
  }
  return out;
}

/// Parses MovieLens user rows into raw attributes: gender, age_years,
/// occupation, zipcode. For ML-1M, age_years holds the age-group code, which
/// is the lower bound of its bracket.
inline AttributeTable parse_user_lines(std::istream& in, RatingFormat format) {
  const auto delim = detail::user_delimiter(format);
  std::map<std::string, std::map<std::string, std::string>> raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(text::trim(line), delim);
    if (f.size() != 5) detail::bad_line(line_no, "expected 5 fields, got " + std::to_string(f.size()));
    const std::string user(text::trim(f[0]));
    std::string_view gender, age, occupation;
    if (format == RatingFormat::movielens_100k) {
      age = f[1], gender = f[2], occupation = f[3];
    } else {
      gender = f[1], age = f[2], occupation = f[3];
    }
    int age_value = 0;
    if (!text::parse_number(age, age_value)) detail::bad_line(line_no, "age is not an integer");
    raw["gender"][user] = std::string(text::trim(gender));
    raw["age_years"][user] = std::to_string(age_value);
    raw["occupation"][user] = std::string(text::trim(occupation));
    raw["zipcode"][user] = std::string(text::trim(f[4]));
  }
  AttributeTable table;
  for (const auto& [name, values] : raw) table.attributes.emplace(name, Attribute::from_values(values));
  return table;
}

/// Loads a MovieLens distribution directory: u.data + u.user for ML-100K,
/// ratings.dat + users.dat for ML-1M.
inline LoadedCorpus load_rating_log(const std::filesystem::path& dir, RatingFormat format) {
  const bool small = format == RatingFormat::movielens_100k;
  const auto ratings_path = dir / (small ? "u.data" : "ratings.dat");
  const auto users_path = dir / (small ? "u.user" : "users.dat");
  LoadedCorpus c;
  c.log.kind = LogKind::rating;
  {
    auto in = detail::open_or_throw(ratings_path);
    try {
      c.log.events = parse_rating_lines(in, format);
    } catch (const DataError& e) {
      throw DataError(ratings_path.string() + ": " + e.what());
    }
  }
  {
    auto in = detail::open_or_throw(users_path);
    try {
      c.attributes = parse_user_lines(in, format);
    } catch (const DataError& e) {
      throw DataError(users_path.string() + ": " + e.what());
    }
  }
  return c;
}

/// Parses listening events and collapses them to one Interaction per
/// (user, artist) pair carrying the latest timestamp and the play count.
///
/// Two row layouts are accepted, detected from the first non-blank row:
///   LastFM-1K:  user, ISO-8601 time, artist-id, artist-name[, track-id, track-name]
///   compact:    user, artist, unix-seconds[, plays]
/// In the LastFM-1K layout a missing artist MBID falls back to the artist name.
inline std::vector<Interaction> parse_listening_lines(std::istream& in) {
  enum class Layout { unknown, lastfm1k, compact } layout = Layout::unknown;
  std::map<std::pair<std::string, std::string>, std::pair<std::int64_t, int>> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty() || line[0] == '#') continue;
    auto body = std::string_view(line);
    if (!body.empty() && body.back() == '\r') body.remove_suffix(1);
    const auto f = text::split(body, "\t");
    if (f.size() < 3) detail::bad_line(line_no, "expected at least 3 fields");
    if (layout == Layout::unknown) {
      layout = detail::parse_iso8601(f[1]) ? Layout::lastfm1k : Layout::compact;
    }
    std::string user(text::trim(f[0]));
    std::string artist;
    std::int64_t ts = 0;
    int plays = 1;
    if (layout == Layout::lastfm1k) {
      if (f.size() < 4) detail::bad_line(line_no, "expected artist id and name");
      const auto parsed = detail::parse_iso8601(f[1]);
      if (!parsed) detail::bad_line(line_no, "bad ISO-8601 timestamp");
      ts = *parsed;
      artist = std::string(text::trim(f[2]));
      if (artist.empty()) artist = std::string(text::trim(f[3]));
    } else {
      artist = std::string(text::trim(f[1]));
      if (!text::parse_number(f[2], ts)) detail::bad_line(line_no, "bad timestamp");
      if (f.size() > 3 && !text::parse_number(f[3], plays)) detail::bad_line(line_no, "bad play count");
    }
    if (ts < 0) detail::bad_line(line_no, "negative timestamp");
    if (user.empty() || artist.empty()) detail::bad_line(line_no, "empty user or artist");
    auto& slot = pairs[{std::move(user), std::move(artist)}];
    slot.first = std::max(slot.first, ts);
    slot.second += plays;
  }
  std::vector<Interaction> out;
  out.reserve(pairs.size());
  for (auto& [key, v] : pairs) out.push_back({key.first, key.second, v.first, v.second});
  return out;
}

/// Parses a LastFM profile file (id, gender, age, country, registered) into raw
/// attributes gender and country. Empty values become "unknown".
inline AttributeTable parse_profile_lines(std::istream& in) {
  std::map<std::string, std::string> gender, country;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty() || line[0] == '#') continue;
    auto body = std::string_view(line);
    if (!body.empty() && body.back() == '\r') body.remove_suffix(1);
    const auto f = text::split(body, "\t");
    if (f.size() < 4) detail::bad_line(line_no, "expected at least 4 fields");
    const std::string user(text::trim(f[0]));
    auto value = [](std::string_view v) {
      v = text::trim(v);
      return v.empty() ? std::string(kUnknownCategory) : std::string(v);
    };
    gender[user] = value(f[1]);
    country[user] = value(f[3]);
  }
  AttributeTable table;
  table.attributes.emplace("gender", Attribute::from_values(gender));
  table.attributes.emplace("country", Attribute::from_values(country));
  return table;
}

/// Loads a LastFM listening log and its profile file. Users without a profile
/// row are kept; their attributes become "unknown" when aligned to a dataset.
inline LoadedCorpus load_listening_log(const std::filesystem::path& events_path,
                                       const std::filesystem::path& profile_path) {
  if (!std::filesystem::exists(profile_path)) {
    throw DataError("missing LastFM profile file " + profile_path.string());
  }
  LoadedCorpus c;
  c.log.kind = LogKind::listening;
  {
    auto in = detail::open_or_throw(events_path);
    try {
      c.log.events = parse_listening_lines(in);
    } catch (const DataError& e) {
      throw DataError(events_path.string() + ": " + e.what());
    }
  }
  {
    auto in = detail::open_or_throw(profile_path);
    try {
      c.attributes = parse_profile_lines(in);
    } catch (const DataError& e) {
      throw DataError(profile_path.string() + ": " + e.what());
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Implicit conversion and filtering

/// Keeps rating events with value >= cutoff (all events for listening logs)
/// and deduplicates (user, item) pairs, keeping the latest timestamp.
inline ImplicitDataset to_implicit(const InteractionLog& log, int cutoff) {
  if (log.kind == LogKind::rating && (cutoff < 1 || cutoff > 5)) {
    throw ConfigError("rating cutoff must lie in 1..5");
  }
  std::map<std::string, std::map<std::string, std::int64_t>> pairs;
  for (const auto& x : log.events) {
    if (log.kind == LogKind::rating && x.value < cutoff) continue;
    auto [it, inserted] = pairs[x.user].emplace(x.item, x.timestamp);
    if (!inserted) it->second = std::max(it->second, x.timestamp);
  }
  return ImplicitDataset::from_pairs(pairs);
}

/// Removes users with fewer than `min_user` items and, when given, items with
/// fewer than `min_item` users. The two rules are applied alternately (items
/// first) until neither removes anything.
inline ImplicitDataset filter_min_activity(const ImplicitDataset& ds, std::size_t min_user,
                                           std::optional<std::size_t> min_item = std::nullopt) {
  if (min_user < 1) throw ConfigError("min_user must be at least 1");
  std::vector<bool> user_alive(ds.users.size(), true);
  std::vector<bool> item_alive(ds.items.size(), true);
  bool changed = true;
  while (changed) {
    changed = false;
    if (min_item) {
      std::vector<std::size_t> item_count(ds.items.size(), 0);
      for (std::size_t u = 0; u < ds.users.size(); ++u) {
        if (!user_alive[u]) continue;
        for (const auto& e : ds.relevant[u]) {
          if (item_alive[e.item]) ++item_count[e.item];
        }
      }
      for (std::size_t i = 0; i < ds.items.size(); ++i) {
        if (item_alive[i] && item_count[i] < *min_item) {
          item_alive[i] = false;
          changed = true;
        }
      }
    }
    for (std::size_t u = 0; u < ds.users.size(); ++u) {
      if (!user_alive[u]) continue;
      std::size_t n = 0;
      for (const auto& e : ds.relevant[u]) n += item_alive[e.item] ? 1 : 0;
      if (n < min_user) {
        user_alive[u] = false;
        changed = true;
      }
    }
    if (!min_item) break;
  }
  std::map<std::string, std::map<std::string, std::int64_t>> pairs;
  for (std::size_t u = 0; u < ds.users.size(); ++u) {
    if (!user_alive[u]) continue;
    auto& row = pairs[ds.users[u]];
    for (const auto& e : ds.relevant[u]) {
      if (item_alive[e.item]) row.emplace(ds.items[e.item], e.timestamp);
    }
  }
  return ImplicitDataset::from_pairs(pairs);
}

// ---------------------------------------------------------------------------
// Attribute derivation

enum class DeriveRule { zip_to_state, country_to_continent, country_to_eu_rest, age_to_group };

inline DeriveRule parse_derive_rule(std::string_view name) {
  if (name == "zip_to_state") return DeriveRule::zip_to_state;
  if (name == "country_to_continent") return DeriveRule::country_to_continent;
  if (name == "country_to_eu_rest") return DeriveRule::country_to_eu_rest;
  if (name == "age_to_group") return DeriveRule::age_to_group;
  throw ConfigError("unknown derivation rule '" + std::string(name) + "'");
}

struct RuleInfo {
  std::string_view source;
  std::string_view target;
  std::string_view lookup_file;  // empty when the rule needs no file
};

inline RuleInfo rule_info(DeriveRule rule) {
  switch (rule) {
    case DeriveRule::zip_to_state: return {"zipcode", "state", "zip3_state.tsv"};
    case DeriveRule::country_to_continent: return {"country", "continent", "country_continent.tsv"};
    case DeriveRule::country_to_eu_rest: return {"country", "eu_vs_rest", "country_eu.tsv"};
    case DeriveRule::age_to_group: return {"age_years", "age", ""};
  }
  throw ConfigError("unhandled derivation rule");
}

/// Reads a two-column tab-separated lookup file; '#' lines are comments.
inline std::map<std::string, std::string> read_lookup(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("missing lookup file " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty() || line[0] == '#') continue;
    const auto f = text::split(text::trim(line), "\t");
    if (f.size() != 2) {
      throw ConfigError(path.string() + ": line " + std::to_string(line_no) + ": expected 2 columns");
    }
    out.emplace(std::string(text::trim(f[0])), std::string(text::trim(f[1])));
  }
  return out;
}

// MovieLens-1M age brackets; ML-1M stores the bracket's lower bound as the code.
inline std::string age_group(int years) {
  if (years < 18) return "under-18";
  if (years < 25) return "18-24";
  if (years < 35) return "25-34";
  if (years < 45) return "35-44";
  if (years < 50) return "45-49";
  if (years < 56) return "50-55";
  return "56+";
}

/// Adds the rule's target attribute. Values the lookup cannot map go to "other";
/// "unknown" source values stay "unknown".
inline AttributeTable derive_attribute(const AttributeTable& table, DeriveRule rule,
                                       const std::filesystem::path& lookup_dir) {
  const auto info = rule_info(rule);
  const auto& source = table.at(std::string(info.source));
  std::map<std::string, std::string> lookup;
  if (!info.lookup_file.empty()) lookup = read_lookup(lookup_dir / std::string(info.lookup_file));

  std::map<std::string, std::string> derived;
  for (const auto& [user, value] : source.values()) {
    if (value == kUnknownCategory) {
      derived[user] = std::string(kUnknownCategory);
      continue;
    }
    std::string out(kOtherCategory);
    if (rule == DeriveRule::age_to_group) {
      int years = 0;
      if (text::parse_number(value, years)) out = age_group(years);
    } else if (rule == DeriveRule::zip_to_state) {
      const bool numeric = value.size() >= 5 &&
                           std::all_of(value.begin(), value.begin() + 5,
                                       [](char c) { return c >= '0' && c <= '9'; });
      if (numeric) {
        const auto it = lookup.find(value.substr(0, 3));
        if (it != lookup.end()) out = it->second;
      }
    } else {
      const auto it = lookup.find(value);
      if (it != lookup.end()) out = it->second;
    }
    derived[user] = std::move(out);
  }
  AttributeTable result = table;
  result.attributes.insert_or_assign(std::string(info.target), Attribute::from_values(derived));
  return result;
}

/// Restricts every attribute to the dataset's users. Users without a value get
/// "unknown"; vocabularies shrink to the categories that remain.
inline AttributeTable align_attributes(const AttributeTable& table, const ImplicitDataset& ds) {
  AttributeTable out;
  for (const auto& [name, attr] : table.attributes) {
    std::map<std::string, std::string> values;
    for (const auto& user : ds.users) {
      const auto v = attr.value_of(user);
      values[user] = v ? std::string(*v) : std::string(kUnknownCategory);
    }
    out.attributes.emplace(name, Attribute::from_values(values));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature encoding

/// One-hot layout: [users | items | categories of the active attribute].
struct FeatureEncoding {
  std::uint32_t num_users = 0;
  std::uint32_t num_items = 0;
  std::uint32_t user_offset = 0;
  std::uint32_t item_offset = 0;
  std::uint32_t attribute_offset = 0;
  std::uint32_t dimension = 0;
  std::optional<std::string> active_attribute;
  std::vector<std::string> attribute_vocabulary;
  std::vector<std::uint32_t> user_category;  // per user index, when an attribute is active

  std::uint32_t user_feature(std::uint32_t u) const { return user_offset + u; }
  std::uint32_t item_feature(std::uint32_t i) const { return item_offset + i; }

  // Features that describe the user side of an example: the user and, when
  // active, the user's attribute category.
  std::vector<std::uint32_t> context(std::uint32_t u) const {
    std::vector<std::uint32_t> ctx{user_feature(u)};
    if (active_attribute) ctx.push_back(attribute_offset + user_category[u]);
    return ctx;
  }

  friend bool operator==(const FeatureEncoding&, const FeatureEncoding&) = default;
};

inline FeatureEncoding encode_features(const ImplicitDataset& ds, const AttributeTable& table,
                                       const std::optional<std::string>& attribute = std::nullopt) {
  FeatureEncoding enc;
  enc.num_users = static_cast<std::uint32_t>(ds.users.size());
  enc.num_items = static_cast<std::uint32_t>(ds.items.size());
  enc.user_offset = 0;
  enc.item_offset = enc.num_users;
  enc.attribute_offset = enc.num_users + enc.num_items;
  enc.dimension = enc.attribute_offset;
  if (!attribute) return enc;

  const auto& attr = table.at(*attribute);
  enc.active_attribute = *attribute;
  enc.attribute_vocabulary = attr.vocabulary;
  enc.user_category.reserve(ds.users.size());
  for (const auto& user : ds.users) {
    const auto it = attr.category.find(user);
    if (it == attr.category.end()) {
      throw ConfigError("user '" + user + "' has no value for attribute '" + *attribute +
                        "'; align the attribute table to the dataset first");
    }
    enc.user_category.push_back(it->second);
  }
  enc.dimension += static_cast<std::uint32_t>(attr.vocabulary.size());
  return enc;
}

/// Only one attribute may be encoded per model.
inline FeatureEncoding encode_features(const ImplicitDataset& ds, const AttributeTable& table,
                                       std::span<const std::string> attributes) {
  if (attributes.size() > 1) {
    throw ConfigError("at most one user attribute can be encoded per model");
  }
  if (attributes.empty()) return encode_features(ds, table, std::nullopt);
  return encode_features(ds, table, std::optional<std::string>(attributes.front()));
}

// ---------------------------------------------------------------------------
// Snapshots
//
// dataset.tsv:     "# fmaudit dataset v1", then rows  user \t item \t timestamp
// attributes.tsv:  "# fmaudit attributes v1", then rows  attribute \t user \t category
// Rows are written in sorted order so identical data gives identical bytes.

inline void write_dataset(std::ostream& out, const ImplicitDataset& ds) {
  out << "# fmaudit dataset v1\n";
  for (std::size_t u = 0; u < ds.users.size(); ++u) {
    for (const auto& e : ds.relevant[u]) {
      out << ds.users[u] << '\t' << ds.items[e.item] << '\t' << e.timestamp << '\n';
    }
  }
}

inline ImplicitDataset read_dataset(std::istream& in) {
  std::map<std::string, std::map<std::string, std::int64_t>> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto f = text::split(line, "\t");
    std::int64_t ts = 0;
    if (f.size() != 3 || !text::parse_number(f[2], ts)) detail::bad_line(line_no, "bad dataset row");
    pairs[std::string(f[0])][std::string(f[1])] = ts;
  }
  return ImplicitDataset::from_pairs(pairs);
}

inline void write_attributes(std::ostream& out, const AttributeTable& table) {
  out << "# fmaudit attributes v1\n";
  for (const auto& [name, attr] : table.attributes) {
    for (const auto& [user, idx] : attr.category) {
      out << name << '\t' << user << '\t' << attr.vocabulary[idx] << '\n';
    }
  }
}

inline AttributeTable read_attributes(std::istream& in) {
  std::map<std::string, std::map<std::string, std::string>> raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto f = text::split(line, "\t");
    if (f.size() != 3) detail::bad_line(line_no, "bad attribute row");
    raw[std::string(f[0])][std::string(f[1])] = std::string(f[2]);
  }
  AttributeTable table;
  for (const auto& [name, values] : raw) table.attributes.emplace(name, Attribute::from_values(values));
  return table;
}

}  // namespace fmaudit
