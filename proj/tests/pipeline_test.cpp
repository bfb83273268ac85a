#include "fmaudit/pipeline.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <fstream>
#include <random>
#include <sstream>

namespace fmaudit {
namespace {

const fs::path kData = FMAUDIT_DATA_DIR;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = fs::temp_directory_path() / ("fmaudit-" + tag + "-" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

ExperimentConfig toy_config(const fs::path& out) {
  ExperimentConfig c;
  c.dataset = DatasetKind::ml100k;
  c.data_path = kData / "toy";
  c.lookup_dir = kData / "lookup";
  c.output_dir = out;
  c.n = 10;
  c.grid_learning_rates = {0.01, 0.05};
  c.grid_epochs = {5, 20};
  c.grid_factors = {5, 10};
  c.audit_folds = 3;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<fs::path> result_files(const fs::path& seed_root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(seed_root)) {
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), seed_root));
  }
  std::sort(out.begin(), out.end());
  return out;
}

TEST(Config, ParsesKeysCommentsAndLists) {
  std::istringstream in(R"(# comment
dataset = lastfm   # trailing comment
data_path = raw
attributes = gender, continent
grid.factors = 5,25
seeds = 1, 2
bprmf = false
)");
  const auto c = parse_config(in, "/base");
  EXPECT_EQ(c.dataset, DatasetKind::lastfm);
  EXPECT_EQ(c.data_path, fs::path("/base/raw"));
  EXPECT_EQ(*c.attributes, (std::vector<std::string>{"gender", "continent"}));
  EXPECT_EQ(c.grid_factors, (std::vector<std::size_t>{5, 25}));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2}));
  EXPECT_FALSE(c.bprmf);
  EXPECT_EQ(effective_min_item(c), std::optional<std::size_t>(10));
}

TEST(Config, UnknownKeyAndBadValueNameTheLine) {
  std::istringstream unknown("n = 5\nlearning_rate = 0.1\n");
  try {
    parse_config(unknown);
    FAIL() << "expected an error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
  std::istringstream bad("n = five\n");
  EXPECT_THROW(parse_config(bad), ConfigError);
  std::istringstream no_eq("dataset ml100k\n");
  EXPECT_THROW(parse_config(no_eq), ConfigError);
}

TEST(Config, AttributeMustExistForDataset) {
  ExperimentConfig c;
  c.data_path = "x";
  c.attributes = std::vector<std::string>{"continent"};
  EXPECT_THROW(validate(c), ConfigError);
  c.dataset = DatasetKind::lastfm;
  EXPECT_NO_THROW(validate(c));
}

TEST(Config, CanonicalTextIgnoresLocationAndThreads) {
  auto a = toy_config("/tmp/a");
  auto b = toy_config("/tmp/b");
  b.threads = 4;
  b.data_path = "/elsewhere";
  EXPECT_EQ(canonical_text(a), canonical_text(b));
  b.alpha = 0.02;
  EXPECT_NE(canonical_text(a), canonical_text(b));
}

TEST(Prepare, CacheIsReusedAndIdentical) {
  TempDir tmp("cache");
  const auto c = toy_config(tmp.path);
  std::ostringstream log;
  const auto first = cmd_prepare(c, log);
  EXPECT_FALSE(first.reused);
  EXPECT_EQ(first.stats.users, 80u);
  const auto second = cmd_prepare(c, log);
  EXPECT_TRUE(second.reused);
  EXPECT_EQ(second.cache_key, first.cache_key);
  EXPECT_EQ(second.dataset, first.dataset);
  EXPECT_EQ(second.split, first.split);
  EXPECT_EQ(format_stats(second.stats), format_stats(first.stats));
  for (const auto& a : experiment_attributes(c)) {
    EXPECT_EQ(second.attributes.at(a).values(), first.attributes.at(a).values()) << a;
  }
}

TEST(Prepare, KeyFollowsSettingsAndInputs) {
  TempDir tmp("key");
  auto c = toy_config(tmp.path);
  std::ostringstream log;
  const auto base = cmd_prepare(c, log).cache_key;
  c.cutoff = 4;
  EXPECT_NE(cmd_prepare(c, log).cache_key, base);

  // same settings, one rating changed
  const auto copy = tmp.path / "data";
  fs::create_directories(copy);
  fs::copy_file(kData / "toy" / "u.user", copy / "u.user");
  auto ratings = slurp(kData / "toy" / "u.data");
  const auto tab = ratings.find('\t', ratings.find('\t') + 1);
  ratings[tab + 1] = ratings[tab + 1] == '5' ? '4' : '5';
  std::ofstream(copy / "u.data", std::ios::binary) << ratings;
  auto d = toy_config(tmp.path);
  d.data_path = copy;
  EXPECT_NE(cmd_prepare(d, log).cache_key, base);
}

TEST(Pipeline, ToyRunProducesEveryArtifactQuickly) {
  TempDir tmp("smoke");
  const auto c = toy_config(tmp.path);
  std::ostringstream log;
  const auto t0 = std::chrono::steady_clock::now();
  const auto summary = cmd_run(c, log);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 60.0);

  const auto seed = seed_dir(c, 42);
  for (const auto& v : variants(c)) {
    EXPECT_TRUE(fs::exists(seed / "models" / (v.name + ".ckpt"))) << v.name;
    EXPECT_TRUE(fs::exists(seed / "models" / (v.name + ".grid.tsv"))) << v.name;
    EXPECT_TRUE(fs::exists(seed / "lists" / (v.name + ".tsv"))) << v.name;
  }
  for (const auto* f : {"metrics.tsv", "audit.tsv", "audit_folds.tsv", "survival.tsv", "survival.txt"}) {
    EXPECT_TRUE(fs::exists(seed / "reports" / f)) << f;
  }
  EXPECT_TRUE(fs::exists(summary.manifest));
  const auto manifest = slurp(summary.manifest);
  EXPECT_NE(manifest.find("config_hash\t" + summary.config_hash), std::string::npos);
  EXPECT_NE(manifest.find("record\tbeta\t0.01"), std::string::npos);

  // every row of every report carries the config hash
  std::ifstream metrics(seed / "reports" / "metrics.tsv");
  const auto rows = read_metric_rows(metrics);
  EXPECT_EQ(rows.size(), variants(c).size() * 10);
  for (const auto& r : rows) EXPECT_EQ(r.config_hash, summary.config_hash);

  std::ifstream survival(seed / "reports" / "survival.tsv");
  std::string line;
  std::size_t n = 0;
  std::getline(survival, line);
  while (std::getline(survival, line)) {
    EXPECT_EQ(line.rfind(summary.config_hash, 0), 0u);
    ++n;
  }
  EXPECT_EQ(n, experiment_attributes(c).size() * 4);

  // a stored checkpoint reproduces the stored lists
  const auto& p = summary.prepared;
  std::ifstream ck(seed / "models" / "none.ckpt");
  const auto params = read_checkpoint(ck);
  const auto lists = recommend_topn(params, p.split, encode_features(p.split.train, p.attributes), c.n);
  std::ostringstream again;
  write_topn(again, lists, p.split.train);
  EXPECT_EQ(again.str(), slurp(seed / "lists" / "none.tsv"));
}

TEST(Pipeline, RepeatedRunsAreByteIdentical) {
  TempDir a("rep-a");
  TempDir b("rep-b");
  std::ostringstream log;
  auto ca = toy_config(a.path);
  auto cb = toy_config(b.path);
  cb.threads = 3;  // scheduling must not change results
  const auto ra = cmd_run(ca, log);
  const auto rb = cmd_run(cb, log);
  EXPECT_EQ(ra.config_hash, rb.config_hash);
  const auto files = result_files(seed_dir(ca, 42));
  ASSERT_EQ(files, result_files(seed_dir(cb, 42)));
  ASSERT_FALSE(files.empty());
  for (const auto& f : files) {
    EXPECT_EQ(slurp(seed_dir(ca, 42) / f), slurp(seed_dir(cb, 42) / f)) << f;
  }
}

TEST(Pipeline, StagesCanRunSeparately) {
  TempDir tmp("stages");
  const auto c = toy_config(tmp.path);
  std::ostringstream log;
  const auto p = cmd_prepare(c, log);
  EXPECT_THROW(cmd_evaluate(c, p, 42, log), DataError);
  cmd_train(c, p, 42, log);
  cmd_evaluate(c, p, 42, log);
  EXPECT_THROW(cmd_report(c, 42, log), DataError);
  cmd_audit(c, p, 42, log);
  const auto rep = cmd_report(c, 42, log);
  EXPECT_EQ(rep.rows.size(), experiment_attributes(c).size());
  EXPECT_EQ(rep.config_hash, config_hash(c, p));
}

TEST(Pipeline, FailingStageIsNamedAndLogged) {
  TempDir tmp("fail");
  auto c = toy_config(tmp.path);
  c.data_path = tmp.path / "missing";
  std::ostringstream log;
  try {
    cmd_run(c, log);
    FAIL() << "expected a stage error";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "prepare");
    EXPECT_NE(std::string(e.what()).find("u.data"), std::string::npos);
  }
  EXPECT_NE(slurp(tmp.path / "manifest.tsv").find("prepare (failed)"), std::string::npos);
}

TEST(Pipeline, SeedsGetSeparateDirectories) {
  TempDir tmp("seeds");
  auto c = toy_config(tmp.path);
  c.seeds = {1, 2};
  c.attributes = std::vector<std::string>{"gender"};
  c.bprmf = false;
  std::ostringstream log;
  cmd_run(c, log);
  EXPECT_TRUE(fs::exists(seed_dir(c, 1) / "reports" / "survival.tsv"));
  EXPECT_TRUE(fs::exists(seed_dir(c, 2) / "reports" / "survival.tsv"));
  EXPECT_NE(slurp(seed_dir(c, 1) / "lists" / "none.tsv"), slurp(seed_dir(c, 2) / "lists" / "none.tsv"));
}

}  // namespace
}  // namespace fmaudit
