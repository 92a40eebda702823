#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "seqtrojan/dataset.hpp"
#include "seqtrojan/error.hpp"
#include "seqtrojan/evaluation.hpp"
#include "seqtrojan/experiment.hpp"
#include "seqtrojan/model.hpp"
#include "seqtrojan/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seqtrojan;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

std::string log_ndjson(const TrainingLog& log) {
  std::string s;
  for (const auto& r : log) s += json(r).dump() + "\n";
  return s;
}

PoisonPlan read_plan(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return json::parse(in).get<PoisonPlan>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concealed backdoor attacks on event-sequence classifiers"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "write a synthetic labelled dataset as records");
  SyntheticConfig scfg;
  fs::path synth_out;
  fs::path synth_config;
  synth->add_option("--out", synth_out, "output .ndjson path")->required();
  synth->add_option("--config", synth_config, "take data.synthetic from an experiment config");
  synth->add_option("--n", scfg.n_sequences, "number of sequences");
  synth->add_option("--vocab", scfg.vocab_size, "vocabulary size including padding");
  synth->add_option("--len-min", scfg.len_min);
  synth->add_option("--len-max", scfg.len_max);
  synth->add_option("--signal", scfg.class_signal, "class signal in [0, 1)");
  synth->add_option("--seed", scfg.seed);

  fs::path config_path;
  std::uint64_t seed = 0;
  fs::path out_dir;

  auto* defaults = app.add_subcommand("defaults", "print the fully populated default experiment config");

  auto* train = app.add_subcommand("train-clean", "train the clean reference model for one seed");
  train->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed);
  train->add_option("--out", out_dir, "directory for clean.ckpt and clean_log.ndjson")->required();

  fs::path clean_path;
  auto* attack = app.add_subcommand("attack", "poison and train the attacked model for one seed");
  attack->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  attack->add_option("--seed", seed);
  attack->add_option("--clean", clean_path, "clean checkpoint")->required()->check(CLI::ExistingFile);
  attack->add_option("--out", out_dir, "directory for plan.json, attacked.ckpt, attack_log.ndjson")->required();

  fs::path attacked_path, plan_path, report_out;
  auto* evaluate = app.add_subcommand("evaluate", "compare an attacked model with its clean parent");
  evaluate->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--seed", seed);
  evaluate->add_option("--clean", clean_path)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--attacked", attacked_path)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--plan", plan_path)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--out", report_out, "also write the report here");

  auto* run = app.add_subcommand("run", "run every seed of an experiment config");
  run->add_option("config", config_path)->required()->check(CLI::ExistingFile);

  auto* sweep = app.add_subcommand("sweep", "run one experiment per swept value");
  sweep->add_option("config", config_path, "sweep config")->required()->check(CLI::ExistingFile);

  fs::path report_dir;
  auto* report = app.add_subcommand("report", "render tables and plots for a run or sweep directory");
  report->add_option("dir", report_dir)->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      if (!synth_config.empty()) scfg = load_config(synth_config).data.synthetic;
      const auto ds = generate_synthetic(scfg);
      if (synth_out.has_parent_path()) fs::create_directories(synth_out.parent_path());
      save_records(ds, synth_out);
      std::cout << "wrote " << ds.size() << " sequences to " << synth_out.string() << "\n";
    } else if (defaults->parsed()) {
      std::cout << config_to_json(ExperimentConfig{}).dump(2) << "\n";
    } else if (train->parsed()) {
      const auto cfg = load_config(config_path);
      const auto data = prepare_data(cfg.data, seed);
      TrainingLog log;
      const auto model = train_clean_for(cfg, data, seed, &log);
      fs::create_directories(out_dir);
      save_checkpoint(model, out_dir / "clean.ckpt");
      write_text(out_dir / "clean_log.ndjson", log_ndjson(log));
      std::cout << "final train accuracy " << (log.empty() ? 0.0 : log.back().accuracy) << "\n";
    } else if (attack->parsed()) {
      const auto cfg = load_config(config_path);
      const auto data = prepare_data(cfg.data, seed);
      const auto clean = load_checkpoint(clean_path);
      const auto outcome = run_attack(cfg, data, clean, seed);
      fs::create_directories(out_dir);
      write_text(out_dir / "plan.json", json(outcome.plan).dump(2) + "\n");
      save_checkpoint(outcome.model, out_dir / "attacked.ckpt");
      write_text(out_dir / "attack_log.ndjson", log_ndjson(outcome.log));
      std::cout << "poisoned " << outcome.plan.poisoned_indices.size() << " training sequences\n";
    } else if (evaluate->parsed()) {
      const auto cfg = load_config(config_path);
      const auto data = prepare_data(cfg.data, seed);
      auto rep = evaluate_attack(load_checkpoint(clean_path), load_checkpoint(attacked_path), data.test,
                                 read_plan(plan_path));
      rep.seed = seed;
      const json record{{"seed", seed}, {"report", rep}, {"config", config_to_json(cfg)}};
      if (!report_out.empty()) write_text(report_out, record.dump(2) + "\n");
      std::cout << json(rep).dump(2) << "\n";
    } else if (run->parsed()) {
      const auto result = run_experiment(load_config(config_path));
      for (const auto& e : result.errors) std::cerr << "run failed at " << e << "\n";
      for (const auto& [name, m] : result.aggregate.metrics) {
        std::cout << name << ": " << format_mean_std(m.mean, m.std) << "\n";
      }
      std::cout << result.dir.string() << "\n";
    } else if (sweep->parsed()) {
      const auto result = run_sweep(load_sweep(config_path));
      std::cout << result.dir.string() << "\n";
    } else if (report->parsed()) {
      for (const auto& f : emit_report(report_dir)) std::cout << f.string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
