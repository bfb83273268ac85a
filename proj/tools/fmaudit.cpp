// Command-line front end for the audit pipeline.
//
//   fmaudit run --config experiment.cfg
//   fmaudit prepare --dataset ml100k --data data/ml-100k --output out
//   fmaudit train|evaluate|audit|report --config experiment.cfg --seed 42

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>

#include "fmaudit/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::map<std::string, std::string> values;
  std::vector<std::string> sets;  // raw key=value pairs
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "experiment config file");
  const std::pair<const char*, const char*> keys[] = {
      {"--dataset", "dataset"},       {"--data", "data_path"},      {"--lookup", "lookup_dir"},
      {"--attributes", "attributes"}, {"--loss", "loss"},           {"-n,--top-n", "n"},
      {"--seed", "seeds"},            {"--output", "output_dir"},   {"--threads", "threads"},
  };
  for (const auto& [flag, key] : keys) {
    cmd->add_option_function<std::string>(
        flag, [&o, k = std::string(key)](const std::string& v) { o.values[k] = v; }, "sets '" + std::string(key) + "'");
  }
  cmd->add_option("--set", o.sets, "any config key, as key=value");
}

fmaudit::ExperimentConfig resolve(const Overrides& o) {
  auto cfg = o.config.empty() ? fmaudit::ExperimentConfig{} : fmaudit::load_config(o.config);
  for (const auto& [k, v] : o.values) fmaudit::set_config_value(cfg, k, v);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw fmaudit::ConfigError("--set expects key=value, got '" + kv + "'");
    fmaudit::set_config_value(cfg, std::string(fmaudit::text::trim(kv.substr(0, eq))), kv.substr(eq + 1));
  }
  fmaudit::validate(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribute-inference audit for factorization-machine recommenders"};
  app.require_subcommand(1);

  Overrides o;
  auto* prepare = app.add_subcommand("prepare", "load, filter and split the data; print corpus statistics");
  auto* train = app.add_subcommand("train", "grid search and Top-N lists for every variant");
  auto* evaluate = app.add_subcommand("evaluate", "accuracy and diversity of the stored lists");
  auto* audit = app.add_subcommand("audit", "attribute inference from the stored lists");
  auto* report = app.add_subcommand("report", "survival table from the evaluation and audit reports");
  auto* run = app.add_subcommand("run", "every stage in order");
  for (auto* cmd : {prepare, train, evaluate, audit, report, run}) add_common(cmd, o);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = resolve(o);
    if (run->parsed()) {
      const auto summary = fmaudit::cmd_run(cfg, std::clog);
      std::cout << "config " << summary.config_hash << "\nmanifest " << summary.manifest.string() << '\n';
      return 0;
    }
    const auto prepared = fmaudit::cmd_prepare(cfg, std::clog);
    if (prepare->parsed()) {
      std::cout << fmaudit::format_stats(prepared.stats);
      std::cout << "cache " << prepared.dir.string() << (prepared.reused ? " (reused)" : "") << '\n';
      return 0;
    }
    for (const auto seed : cfg.seeds) {
      if (train->parsed()) fmaudit::cmd_train(cfg, prepared, seed, std::clog);
      if (evaluate->parsed()) fmaudit::cmd_evaluate(cfg, prepared, seed, std::clog);
      if (audit->parsed()) fmaudit::cmd_audit(cfg, prepared, seed, std::clog);
      if (report->parsed()) fmaudit::cmd_report(cfg, seed, std::cout);
    }
  } catch (const fmaudit::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
