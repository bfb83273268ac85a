#pragma once

// End-to-end experiment: prepare -> train (grid search per variant) ->
// evaluate -> audit -> report.
//
// Output layout under output_dir:
//   prepared/<cache key>/    dataset.tsv attributes.tsv split.tsv stats.tsv complete
//   seed-<s>/models/         <variant>.ckpt <variant>.grid.tsv
//   seed-<s>/lists/          <variant>.tsv
//   seed-<s>/reports/        metrics.tsv audit.tsv audit_folds.tsv survival.tsv survival.txt
//   manifest.tsv
//
// Variants are "none", one per attribute, and "bprmf".

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fmaudit/audit.hpp"
#include "fmaudit/common.hpp"
#include "fmaudit/corpus.hpp"
#include "fmaudit/metrics.hpp"
#include "fmaudit/ranker.hpp"
#include "fmaudit/report.hpp"
#include "fmaudit/splits.hpp"
#include "fmaudit/survival.hpp"
#include "fmaudit/topn.hpp"

namespace fmaudit {

namespace fs = std::filesystem;

enum class DatasetKind { ml100k, ml1m, lastfm };

inline std::string_view to_string(DatasetKind d) {
  switch (d) {
    case DatasetKind::ml100k: return "ml100k";
    case DatasetKind::ml1m: return "ml1m";
    case DatasetKind::lastfm: return "lastfm";
  }
  return "?";
}

inline DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "ml100k") return DatasetKind::ml100k;
  if (s == "ml1m") return DatasetKind::ml1m;
  if (s == "lastfm") return DatasetKind::lastfm;
  throw ConfigError("unknown dataset '" + std::string(s) + "' (expected ml100k, ml1m or lastfm)");
}

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::ml100k;
  fs::path data_path;
  fs::path lookup_dir = "data/lookup";
  std::optional<std::vector<std::string>> attributes;  // unset: every attribute of the dataset
  Loss loss = Loss::warp;
  std::size_t n = 50;
  std::vector<std::uint64_t> seeds{42};
  fs::path output_dir = "out";

  std::vector<double> grid_learning_rates{0.001, 0.005, 0.01, 0.05, 0.1};
  std::vector<std::size_t> grid_epochs{5, 50, 100, 300, 500};
  std::vector<std::size_t> grid_factors{5, 25, 50, 100, 200};
  double alpha = 0.01;
  double beta = 0.01;
  std::size_t max_warp_trials = 50;
  std::size_t batch_size = 1;

  int cutoff = 3;
  std::size_t min_user = 20;
  std::optional<std::size_t> min_item;  // unset: 10 for lastfm, none otherwise

  std::size_t audit_folds = 5;
  double audit_l2 = 1.0;
  std::size_t audit_max_iterations = 500;
  double audit_tol = 1e-6;

  bool bprmf = true;
  std::size_t threads = 1;  // 0 = hardware concurrency

  std::string events_file = "userid-timestamp-artid-artname-traid-traname.tsv";
  std::string profile_file = "userid-profile.tsv";
};

/// Attributes each dataset can provide, in report order.
inline std::vector<std::string> available_attributes(DatasetKind d) {
  if (d == DatasetKind::lastfm) return {"gender", "continent", "eu_vs_rest"};
  return {"gender", "age", "occupation", "state"};
}

inline std::vector<std::string> experiment_attributes(const ExperimentConfig& c) {
  const auto all = available_attributes(c.dataset);
  if (!c.attributes) return all;
  for (const auto& a : *c.attributes) {
    if (std::find(all.begin(), all.end(), a) == all.end()) {
      std::string names;
      for (const auto& n : all) names += (names.empty() ? "" : ", ") + n;
      throw ConfigError("attribute '" + a + "' is not available for " + std::string(to_string(c.dataset)) +
                        " (available: " + names + ")");
    }
  }
  return *c.attributes;
}

inline std::optional<std::size_t> effective_min_item(const ExperimentConfig& c) {
  if (c.min_item) return *c.min_item == 0 ? std::nullopt : c.min_item;
  if (c.dataset == DatasetKind::lastfm) return 10;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Config file: one "key = value" per line, '#' starts a comment, lists are
// comma-separated. Keys: see set_config_value.

namespace detail {
template <typename T>
T parse_config_number(const std::string& key, std::string_view v) {
  T out{};
  if (!text::parse_number(v, out)) throw ConfigError("config key '" + key + "': bad value '" + std::string(v) + "'");
  return out;
}

template <typename T>
std::vector<T> parse_config_list(const std::string& key, std::string_view v) {
  std::vector<T> out;
  for (const auto part : text::split(v, ",")) {
    const auto t = text::trim(part);
    if (t.empty()) continue;
    if constexpr (std::is_same_v<T, std::string>) {
      out.emplace_back(t);
    } else {
      out.push_back(parse_config_number<T>(key, t));
    }
  }
  return out;
}

inline bool parse_config_bool(const std::string& key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false");
}
}  // namespace detail

inline void set_config_value(ExperimentConfig& c, const std::string& key, std::string_view raw) {
  const auto v = text::trim(raw);
  using detail::parse_config_list;
  using detail::parse_config_number;
  if (key == "dataset") {
    c.dataset = parse_dataset_kind(v);
  } else if (key == "data_path") {
    c.data_path = std::string(v);
  } else if (key == "lookup_dir") {
    c.lookup_dir = std::string(v);
  } else if (key == "attributes") {
    c.attributes = parse_config_list<std::string>(key, v);
    if (c.attributes->size() == 1 && c.attributes->front() == "none") c.attributes->clear();
  } else if (key == "loss") {
    c.loss = parse_loss(v);
  } else if (key == "n") {
    c.n = parse_config_number<std::size_t>(key, v);
  } else if (key == "seeds") {
    c.seeds = parse_config_list<std::uint64_t>(key, v);
  } else if (key == "output_dir") {
    c.output_dir = std::string(v);
  } else if (key == "grid.learning_rates") {
    c.grid_learning_rates = parse_config_list<double>(key, v);
  } else if (key == "grid.epochs") {
    c.grid_epochs = parse_config_list<std::size_t>(key, v);
  } else if (key == "grid.factors") {
    c.grid_factors = parse_config_list<std::size_t>(key, v);
  } else if (key == "alpha") {
    c.alpha = parse_config_number<double>(key, v);
  } else if (key == "beta") {
    c.beta = parse_config_number<double>(key, v);
  } else if (key == "max_warp_trials") {
    c.max_warp_trials = parse_config_number<std::size_t>(key, v);
  } else if (key == "batch_size") {
    c.batch_size = parse_config_number<std::size_t>(key, v);
  } else if (key == "cutoff") {
    c.cutoff = parse_config_number<int>(key, v);
  } else if (key == "min_user") {
    c.min_user = parse_config_number<std::size_t>(key, v);
  } else if (key == "min_item") {
    c.min_item = parse_config_number<std::size_t>(key, v);
  } else if (key == "audit.folds") {
    c.audit_folds = parse_config_number<std::size_t>(key, v);
  } else if (key == "audit.l2") {
    c.audit_l2 = parse_config_number<double>(key, v);
  } else if (key == "audit.max_iterations") {
    c.audit_max_iterations = parse_config_number<std::size_t>(key, v);
  } else if (key == "audit.tol") {
    c.audit_tol = parse_config_number<double>(key, v);
  } else if (key == "bprmf") {
    c.bprmf = detail::parse_config_bool(key, v);
  } else if (key == "threads") {
    c.threads = parse_config_number<std::size_t>(key, v);
  } else if (key == "lastfm.events_file") {
    c.events_file = std::string(v);
  } else if (key == "lastfm.profile_file") {
    c.profile_file = std::string(v);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

inline void validate(const ExperimentConfig& c) {
  if (c.data_path.empty()) throw ConfigError("data_path is not set");
  if (c.n == 0) throw ConfigError("n must be positive");
  if (c.seeds.empty()) throw ConfigError("at least one seed is required");
  if (c.grid_learning_rates.empty() || c.grid_epochs.empty() || c.grid_factors.empty()) {
    throw ConfigError("every grid axis needs at least one value");
  }
  for (const auto k : c.grid_factors) {
    if (k == 0) throw ConfigError("grid.factors values must be positive");
  }
  if (c.audit_folds < 2) throw ConfigError("audit.folds must be at least 2");
  if (c.max_warp_trials == 0) throw ConfigError("max_warp_trials must be positive");
  experiment_attributes(c);
}

/// Relative paths in the file resolve against the file's directory.
inline ExperimentConfig parse_config(std::istream& in, const fs::path& base_dir = {}) {
  ExperimentConfig c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const auto body = text::trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(text::trim(body.substr(0, eq)));
    try {
      set_config_value(c, key, body.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!base_dir.empty()) {
    for (auto* p : {&c.data_path, &c.lookup_dir, &c.output_dir}) {
      if (!p->empty() && p->is_relative()) *p = base_dir / *p;
    }
  }
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in, path.parent_path());
}

/// Every setting that affects results, one "key=value" per line in a fixed
/// order. Paths, output location and thread count are left out.
inline std::string canonical_text(const ExperimentConfig& c) {
  std::ostringstream os;
  auto list = [&](const auto& v) {
    std::string s;
    for (const auto& x : v) {
      if (!s.empty()) s += ',';
      if constexpr (std::is_floating_point_v<std::decay_t<decltype(x)>>) {
        s += text::format_exact(x);
      } else if constexpr (std::is_arithmetic_v<std::decay_t<decltype(x)>>) {
        s += std::to_string(x);
      } else {
        s += x;
      }
    }
    return s;
  };
  const auto min_item = effective_min_item(c);
  os << "alpha=" << text::format_exact(c.alpha) << '\n'
     << "attributes=" << list(experiment_attributes(c)) << '\n'
     << "audit.folds=" << c.audit_folds << '\n'
     << "audit.l2=" << text::format_exact(c.audit_l2) << '\n'
     << "audit.max_iterations=" << c.audit_max_iterations << '\n'
     << "audit.tol=" << text::format_exact(c.audit_tol) << '\n'
     << "batch_size=" << c.batch_size << '\n'
     << "beta=" << text::format_exact(c.beta) << '\n'
     << "bprmf=" << (c.bprmf ? "true" : "false") << '\n'
     << "cutoff=" << c.cutoff << '\n'
     << "dataset=" << to_string(c.dataset) << '\n'
     << "grid.epochs=" << list(c.grid_epochs) << '\n'
     << "grid.factors=" << list(c.grid_factors) << '\n'
     << "grid.learning_rates=" << list(c.grid_learning_rates) << '\n'
     << "loss=" << to_string(c.loss) << '\n'
     << "max_warp_trials=" << c.max_warp_trials << '\n'
     << "min_item=" << (min_item ? std::to_string(*min_item) : "0") << '\n'
     << "min_user=" << c.min_user << '\n'
     << "n=" << c.n << '\n'
     << "seeds=" << list(c.seeds) << '\n'
     << "warp_margin=" << text::format_exact(kWarpMargin) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::string stage;
  std::string seed;  // "-" for seed-independent stages
  fs::path artifact;
  double seconds = 0;
};

struct RunManifest {
  std::string config_hash;
  std::string cache_key;
  std::map<std::string, std::string> record;  // library-of-record values
  std::vector<ManifestEntry> entries;

  void write(const fs::path& path) const {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << "# fmaudit manifest v1\n";
    out << "config_hash\t" << config_hash << '\n';
    out << "cache_key\t" << cache_key << '\n';
    for (const auto& [k, v] : record) out << "record\t" << k << '\t' << v << '\n';
    out << "stage\tseed\tartifact\tseconds\n";
    for (const auto& e : entries) {
      out << e.stage << '\t' << e.seed << '\t' << e.artifact.string() << '\t'
          << text::format_fixed(e.seconds, 3) << '\n';
    }
  }
};

/// A failed stage, with the manifest state written at failure time.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what, const fs::path& manifest)
      : std::runtime_error("stage '" + stage + "' failed: " + what + " (manifest: " + manifest.string() + ")"),
        stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// ---------------------------------------------------------------------------
// Prepare

struct PreparedData {
  ImplicitDataset dataset;
  AttributeTable attributes;  // aligned to dataset users, experiment attributes only
  TemporalSplit split;
  CorpusStats stats;
  std::string cache_key;
  fs::path dir;
  bool reused = false;
};

namespace detail {

inline std::string file_digest(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  Fnv1a h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return h.hex();
}

inline std::vector<fs::path> raw_inputs(const ExperimentConfig& c) {
  switch (c.dataset) {
    case DatasetKind::ml100k: return {c.data_path / "u.data", c.data_path / "u.user"};
    case DatasetKind::ml1m: return {c.data_path / "ratings.dat", c.data_path / "users.dat"};
    case DatasetKind::lastfm: return {c.data_path / c.events_file, c.data_path / c.profile_file};
  }
  return {};
}

// Attribute name -> derivation rule that produces it (absent: raw attribute).
inline std::optional<DeriveRule> derivation_of(DatasetKind d, const std::string& attribute) {
  if (d == DatasetKind::lastfm) {
    if (attribute == "continent") return DeriveRule::country_to_continent;
    if (attribute == "eu_vs_rest") return DeriveRule::country_to_eu_rest;
    return std::nullopt;
  }
  if (attribute == "age") return DeriveRule::age_to_group;
  if (attribute == "state") return DeriveRule::zip_to_state;
  return std::nullopt;
}

inline std::string input_digest(const ExperimentConfig& c) {
  Fnv1a h;
  for (const auto& p : raw_inputs(c)) {
    if (!fs::exists(p)) throw DataError("missing input file " + p.string());
    h.update(p.filename().string());
    h.update(file_digest(p));
  }
  for (const auto& a : experiment_attributes(c)) {
    const auto rule = derivation_of(c.dataset, a);
    if (!rule) continue;
    const auto file = rule_info(*rule).lookup_file;
    if (file.empty()) continue;
    const auto path = c.lookup_dir / std::string(file);
    if (!fs::exists(path)) throw ConfigError("missing lookup file " + path.string());
    h.update(std::string(file));
    h.update(file_digest(path));
  }
  return h.hex();
}

inline std::string prepare_key(const ExperimentConfig& c) {
  std::ostringstream os;
  const auto min_item = effective_min_item(c);
  os << "dataset=" << to_string(c.dataset) << "\ncutoff=" << c.cutoff << "\nmin_user=" << c.min_user
     << "\nmin_item=" << (min_item ? std::to_string(*min_item) : "0") << "\nattributes=";
  for (const auto& a : experiment_attributes(c)) os << a << ',';
  os << "\ninputs=" << input_digest(c) << '\n';
  return hash_hex(os.str());
}

inline CorpusStats corpus_stats(const ExperimentConfig& c, const ImplicitDataset& ds,
                                const AttributeTable& table) {
  CorpusStats s;
  s.dataset = std::string(to_string(c.dataset));
  s.users = ds.users.size();
  s.items = ds.items.size();
  s.interactions = ds.interaction_count();
  for (const auto& a : experiment_attributes(c)) {
    const auto& vocab = table.at(a).vocabulary;
    const auto known = std::count_if(vocab.begin(), vocab.end(),
                                     [](const std::string& v) { return v != kUnknownCategory; });
    s.attribute_categories.push_back({a, static_cast<std::size_t>(known)});
  }
  return s;
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& w) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  w(out);
  if (!out) throw DataError("error while writing " + path.string());
}

template <typename Reader>
auto read_file(const fs::path& path, Reader&& r) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return r(in);
}

}  // namespace detail

/// Loads and filters the raw data, derives the requested attributes and makes
/// the temporal split. Results are cached under output_dir/prepared/<key>,
/// keyed by the raw file contents and every preprocessing setting.
inline PreparedData cmd_prepare(const ExperimentConfig& c, std::ostream& log = std::clog) {
  validate(c);
  PreparedData p;
  p.cache_key = detail::prepare_key(c);
  p.dir = c.output_dir / "prepared" / p.cache_key;
  const auto attrs = experiment_attributes(c);

  if (fs::exists(p.dir / "complete")) {
    p.dataset = detail::read_file(p.dir / "dataset.tsv", [](std::istream& in) { return read_dataset(in); });
    p.attributes = detail::read_file(p.dir / "attributes.tsv", [](std::istream& in) { return read_attributes(in); });
    p.split = detail::read_file(p.dir / "split.tsv", [](std::istream& in) { return read_split(in); });
    p.stats = detail::corpus_stats(c, p.dataset, p.attributes);
    p.reused = true;
    log << "prepare: reusing cache " << p.dir.string() << '\n';
    return p;
  }

  LoadedCorpus corpus;
  if (c.dataset == DatasetKind::lastfm) {
    corpus = load_listening_log(c.data_path / c.events_file, c.data_path / c.profile_file);
  } else {
    corpus = load_rating_log(c.data_path, c.dataset == DatasetKind::ml100k ? RatingFormat::movielens_100k
                                                                           : RatingFormat::movielens_1m);
  }
  p.dataset = filter_min_activity(to_implicit(corpus.log, c.cutoff), c.min_user, effective_min_item(c));

  AttributeTable table = corpus.attributes;
  for (const auto& a : attrs) {
    if (const auto rule = detail::derivation_of(c.dataset, a)) table = derive_attribute(table, *rule, c.lookup_dir);
  }
  AttributeTable selected;
  for (const auto& a : attrs) selected.attributes.emplace(a, table.at(a));
  p.attributes = align_attributes(selected, p.dataset);
  p.split = temporal_split(p.dataset);
  p.stats = detail::corpus_stats(c, p.dataset, p.attributes);

  detail::write_file(p.dir / "dataset.tsv", [&](std::ostream& o) { write_dataset(o, p.dataset); });
  detail::write_file(p.dir / "attributes.tsv", [&](std::ostream& o) { write_attributes(o, p.attributes); });
  detail::write_file(p.dir / "split.tsv", [&](std::ostream& o) { write_split(o, p.split); });
  detail::write_file(p.dir / "stats.tsv", [&](std::ostream& o) { o << format_stats(p.stats); });
  detail::write_file(p.dir / "complete", [&](std::ostream& o) { o << p.cache_key << '\n'; });
  log << "prepare: wrote " << p.dir.string() << '\n';
  return p;
}

inline std::string config_hash(const ExperimentConfig& c, const PreparedData& p) {
  return hash_hex(canonical_text(c) + "prepared=" + p.cache_key + "\n");
}

// ---------------------------------------------------------------------------
// Train

struct VariantSpec {
  std::string name;       // none, <attribute>, bprmf
  std::string algorithm;  // fm-warp, fm-bpr, bprmf
  std::optional<std::string> attribute;
};

inline std::vector<VariantSpec> variants(const ExperimentConfig& c) {
  const std::string fm = "fm-" + std::string(to_string(c.loss));
  std::vector<VariantSpec> out{{"none", fm, std::nullopt}};
  for (const auto& a : experiment_attributes(c)) out.push_back({a, fm, a});
  if (c.bprmf) out.push_back({"bprmf", "bprmf", std::nullopt});
  return out;
}

inline fs::path seed_dir(const ExperimentConfig& c, std::uint64_t seed) {
  return c.output_dir / ("seed-" + std::to_string(seed));
}

inline std::vector<TrainConfig> experiment_grid(const ExperimentConfig& c, Loss loss, std::uint64_t seed) {
  TrainConfig base;
  base.loss = loss;
  base.reg_weights = c.alpha;
  base.reg_factors = c.beta;
  base.seed = seed;
  base.max_warp_trials = c.max_warp_trials;
  base.batch_size = c.batch_size;
  return make_grid(base, c.grid_learning_rates, c.grid_epochs, c.grid_factors);
}

inline void write_grid(std::ostream& out, const GridResult& r) {
  out << "learning_rate\tepochs\tfactors\tvalidation_map\tdiverged\tselected\n";
  for (const auto& g : r.evaluated) {
    out << text::format_exact(g.config.learning_rate) << '\t' << g.config.epochs << '\t' << g.config.factors
        << '\t' << (g.diverged ? "nan" : text::format_exact(g.map)) << '\t' << (g.diverged ? 1 : 0) << '\t'
        << (g.config == r.best ? 1 : 0) << '\n';
  }
}

/// Grid search, final model and Top-N lists for every variant of one seed.
inline void cmd_train(const ExperimentConfig& c, const PreparedData& p, std::uint64_t seed,
                      std::ostream& log = std::clog) {
  const auto dir = seed_dir(c, seed);
  for (const auto& v : variants(c)) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto enc = v.algorithm == "bprmf" ? mf_encoding(p.split.train)
                                            : encode_features(p.split.train, p.attributes, v.attribute);
    const auto grid = experiment_grid(c, v.algorithm == "bprmf" ? Loss::bpr : c.loss, seed);
    const auto result = grid_search(p.split, enc, grid, c.n, c.threads);
    const auto lists = recommend_topn(result.params, p.split, enc, c.n);
    detail::write_file(dir / "models" / (v.name + ".ckpt"),
                       [&](std::ostream& o) { write_checkpoint(o, result.params, result.best); });
    detail::write_file(dir / "models" / (v.name + ".grid.tsv"), [&](std::ostream& o) { write_grid(o, result); });
    detail::write_file(dir / "lists" / (v.name + ".tsv"),
                       [&](std::ostream& o) { write_topn(o, lists, p.split.train); });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << "train: seed " << seed << " variant " << v.name << " best {" << result.best.describe()
        << "} validation MAP " << text::format_fixed(result.best_map, 4) << " (" << text::format_fixed(secs, 1)
        << " s)\n";
  }
}

inline TopNList read_lists(const ExperimentConfig& c, const PreparedData& p, std::uint64_t seed,
                           const std::string& variant) {
  const auto path = seed_dir(c, seed) / "lists" / (variant + ".tsv");
  if (!fs::exists(path)) throw DataError("missing lists " + path.string() + "; run training first");
  return detail::read_file(path, [&](std::istream& in) { return read_topn(in, p.split.train); });
}

// ---------------------------------------------------------------------------
// Evaluate

inline std::vector<MetricRow> cmd_evaluate(const ExperimentConfig& c, const PreparedData& p,
                                           std::uint64_t seed, std::ostream& log = std::clog) {
  const auto hash = config_hash(c, p);
  const std::string dataset(to_string(c.dataset));
  std::vector<MetricRow> rows;
  for (const auto& v : variants(c)) {
    const auto lists = read_lists(c, p, seed, v.name);
    const auto acc = accuracy_metrics(lists, p.split.test);
    if (acc.skipped_users > 0) {
      log << "evaluate: warning: " << acc.skipped_users << " users without test items were skipped\n";
    }
    const auto div = diversity_metrics(lists, p.split.train.items.size());
    const auto r = metric_rows(hash, dataset, v.algorithm, v.attribute.value_or("none"), acc, div);
    rows.insert(rows.end(), r.begin(), r.end());
    log << "evaluate: " << v.name << " nDCG@" << c.n << ' ' << text::format_fixed(acc.ndcg, 4) << " coverage "
        << div.item_coverage << '\n';
  }
  detail::write_file(seed_dir(c, seed) / "reports" / "metrics.tsv",
                     [&](std::ostream& o) { write_metric_rows(o, rows); });
  return rows;
}

// ---------------------------------------------------------------------------
// Audit

/// Class labels for the users whose value is known. `rows` are the dataset
/// user indices kept, `labels` index into `classes`.
struct AuditLabels {
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  std::vector<std::string> classes;
};

inline AuditLabels audit_labels(const PreparedData& p, const std::string& attribute) {
  const auto& attr = p.attributes.at(attribute);
  AuditLabels out;
  std::map<std::string, int> index;
  for (const auto& v : attr.vocabulary) {
    if (v == kUnknownCategory) continue;
    index.emplace(v, static_cast<int>(out.classes.size()));
    out.classes.push_back(v);
  }
  for (std::size_t u = 0; u < p.dataset.users.size(); ++u) {
    const auto v = attr.value_of(p.dataset.users[u]);
    if (!v || *v == kUnknownCategory) continue;
    out.rows.push_back(u);
    out.labels.push_back(index.at(std::string(*v)));
  }
  return out;
}

inline ClassifierConfig audit_classifier(const ExperimentConfig& c, std::uint64_t seed) {
  ClassifierConfig cfg;
  cfg.l2_strength = c.audit_l2;
  cfg.max_iterations = c.audit_max_iterations;
  cfg.convergence_tol = c.audit_tol;
  cfg.seed = seed;
  return cfg;
}

/// Cross-validated attribute inference from one set of lists.
inline AuditReport audit_lists(const ExperimentConfig& c, const PreparedData& p, const TopNList& lists,
                               const std::string& attribute, std::uint64_t seed) {
  const auto labels = audit_labels(p, attribute);
  const auto x = build_features(lists, p.split.train.items.size()).subset(labels.rows);
  const auto folds = stratified_kfold(labels.labels, c.audit_folds, seed);
  auto rep = cross_validate(x, labels.labels, folds, labels.classes.size(), audit_classifier(c, seed));
  rep.attribute = attribute;
  return rep;
}

inline std::vector<AuditRow> cmd_audit(const ExperimentConfig& c, const PreparedData& p, std::uint64_t seed,
                                       std::ostream& log = std::clog) {
  const auto hash = config_hash(c, p);
  const std::string dataset(to_string(c.dataset));
  const auto none_lists = read_lists(c, p, seed, "none");
  std::vector<AuditRow> rows;
  std::ostringstream folds_out;
  folds_out << "config_hash\tdataset\tattribute\tvariant\tclassifier\tfold\tmacro_f1\n";
  auto emit = [&](const AuditReport& r, Variant variant) {
    rows.push_back({hash, dataset, r.attribute, variant, "logreg", r.classifier_f1, r.classifier_f1_std});
    rows.push_back({hash, dataset, r.attribute, variant, "most-frequent", r.baseline_f1, r.baseline_f1_std});
    for (std::size_t f = 0; f < r.fold_classifier_f1.size(); ++f) {
      folds_out << hash << '\t' << dataset << '\t' << r.attribute << '\t' << to_string(variant) << "\tlogreg\t" << f
                << '\t' << text::format_exact(r.fold_classifier_f1[f]) << '\n';
      folds_out << hash << '\t' << dataset << '\t' << r.attribute << '\t' << to_string(variant)
                << "\tmost-frequent\t" << f << '\t' << text::format_exact(r.fold_baseline_f1[f]) << '\n';
    }
    log << "audit: " << r.attribute << ' ' << to_string(variant) << " logreg "
        << text::format_fixed(r.classifier_f1, 4) << " +- " << text::format_fixed(r.classifier_f1_std, 4)
        << " most-frequent " << text::format_fixed(r.baseline_f1, 4) << '\n';
  };
  for (const auto& a : experiment_attributes(c)) {
    emit(audit_lists(c, p, none_lists, a, seed), Variant::none);
    emit(audit_lists(c, p, read_lists(c, p, seed, a), a, seed), Variant::with_side_information);
  }
  const auto dir = seed_dir(c, seed) / "reports";
  detail::write_file(dir / "audit.tsv", [&](std::ostream& o) { write_audit_rows(o, rows); });
  detail::write_file(dir / "audit_folds.tsv", [&](std::ostream& o) { o << folds_out.str(); });
  return rows;
}

// ---------------------------------------------------------------------------
// Report

inline SurvivalReport cmd_report(const ExperimentConfig& c, std::uint64_t seed, std::ostream& log = std::clog) {
  const auto dir = seed_dir(c, seed) / "reports";
  for (const auto* f : {"metrics.tsv", "audit.tsv"}) {
    if (!fs::exists(dir / f)) throw DataError("missing " + (dir / f).string() + "; run evaluate and audit first");
  }
  const auto metrics = detail::read_file(dir / "metrics.tsv", [](std::istream& in) { return read_metric_rows(in); });
  const auto audits = detail::read_file(dir / "audit.tsv", [](std::istream& in) { return read_audit_rows(in); });
  const std::string dataset(to_string(c.dataset));
  const auto rep = survival_from_rows(audits, metrics, "fm-" + std::string(to_string(c.loss)));
  detail::write_file(dir / "survival.tsv", [&](std::ostream& o) { write_survival_rows(o, rep, dataset); });
  const auto table = survival_table(rep, dataset);
  detail::write_file(dir / "survival.txt", [&](std::ostream& o) { o << table; });
  log << table;
  return rep;
}

// ---------------------------------------------------------------------------
// Run

struct RunSummary {
  std::string config_hash;
  PreparedData prepared;
  fs::path manifest;
};

/// Every stage for every seed. A failing stage raises StageError after the
/// manifest has been written.
inline RunSummary cmd_run(const ExperimentConfig& c, std::ostream& log = std::clog) {
  RunManifest manifest;
  manifest.record = {{"alpha", text::format_exact(c.alpha)},
                     {"beta", text::format_exact(c.beta)},
                     {"warp_margin", text::format_exact(kWarpMargin)},
                     {"max_warp_trials", std::to_string(c.max_warp_trials)},
                     {"n", std::to_string(c.n)}};
  const auto manifest_path = c.output_dir / "manifest.tsv";
  RunSummary summary;
  summary.manifest = manifest_path;

  auto stage = [&](const std::string& name, const std::string& seed, const fs::path& artifact, auto&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      body();
    } catch (const std::exception& e) {
      manifest.entries.push_back({name + " (failed)", seed, artifact, 0.0});
      manifest.write(manifest_path);
      throw StageError(name, e.what(), manifest_path);
    }
    manifest.entries.push_back(
        {name, seed, artifact, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
    manifest.write(manifest_path);
  };

  stage("prepare", "-", c.output_dir / "prepared", [&] {
    summary.prepared = cmd_prepare(c, log);
    log << format_stats(summary.prepared.stats);
  });
  const auto& p = summary.prepared;
  summary.config_hash = config_hash(c, p);
  manifest.config_hash = summary.config_hash;
  manifest.cache_key = p.cache_key;
  manifest.entries.back().artifact = p.dir;

  for (const auto seed : c.seeds) {
    const auto s = std::to_string(seed);
    const auto dir = seed_dir(c, seed);
    stage("train", s, dir / "lists", [&] { cmd_train(c, p, seed, log); });
    stage("evaluate", s, dir / "reports" / "metrics.tsv", [&] { cmd_evaluate(c, p, seed, log); });
    stage("audit", s, dir / "reports" / "audit.tsv", [&] { cmd_audit(c, p, seed, log); });
    stage("report", s, dir / "reports" / "survival.tsv", [&] { cmd_report(c, seed, log); });
  }
  return summary;
}

}  // namespace fmaudit
