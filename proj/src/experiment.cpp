#include "seqtrojan/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "seqtrojan/error.hpp"
#include "seqtrojan/random.hpp"

namespace seqtrojan {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::DataPoisoning: return "data_poisoning";
    case AttackMethod::WeightPoisoning: return "weight_poisoning";
    case AttackMethod::ThreeHeads: return "three_heads";
  }
  return "?";
}

AttackMethod parse_attack_method(std::string_view text) {
  if (text == "data_poisoning") return AttackMethod::DataPoisoning;
  if (text == "weight_poisoning") return AttackMethod::WeightPoisoning;
  if (text == "three_heads") return AttackMethod::ThreeHeads;
  throw Error(ErrorKind::Config, "unknown attack method: " + std::string(text));
}

std::string_view to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::Ratio: return "ratio";
    case SweepParameter::Position: return "position";
    case SweepParameter::K: return "k";
  }
  return "?";
}

SweepParameter parse_sweep_parameter(std::string_view text) {
  if (text == "ratio") return SweepParameter::Ratio;
  if (text == "position") return SweepParameter::Position;
  if (text == "k") return SweepParameter::K;
  throw Error(ErrorKind::Config, "unknown sweep parameter: " + std::string(text));
}

// ---- config ----

void ExperimentConfig::validate() const {
  if (name.empty()) throw Error(ErrorKind::Config, "experiment name is empty");
  if (n_runs == 0) throw Error(ErrorKind::Config, "n_runs must be positive");
  if (seeds.size() != n_runs) throw Error(ErrorKind::Config, "seeds length must equal n_runs");
  if (data.source == "synthetic") {
    data.synthetic.validate(data.min_len);
  } else if (data.source == "csv" || data.source == "records") {
    if (data.path.empty()) throw Error(ErrorKind::Config, "data.path is required for source " + data.source);
  } else {
    throw Error(ErrorKind::Config, "unknown data source: " + data.source);
  }
  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) {
    throw Error(ErrorKind::Config, "test_fraction must be in (0, 1)");
  }
  if (data.min_len == 0 || data.min_len > data.max_len) throw Error(ErrorKind::Config, "need 0 < min_len <= max_len");
  train.validate();
  attack_train.validate();
  if (train.distill_weight != 0.0 || train.freeze_regime != FreezeRegime::None) {
    throw Error(ErrorKind::Config, "the clean model trains without distillation or freezing");
  }
  if (!(attack.ratio >= 0.0 && attack.ratio <= 1.0)) throw Error(ErrorKind::Config, "ratio must be in [0, 1]");
  if (attack.trigger == TriggerStrategy::ComposedStructure && attack.k < 2) {
    throw Error(ErrorKind::Config, "composed_structure needs k >= 2");
  }
  if (attack.method == AttackMethod::WeightPoisoning && attack.trigger != TriggerStrategy::RareTokens) {
    throw Error(ErrorKind::Config, "weight poisoning requires the rare_tokens trigger");
  }
  if (attack.method != AttackMethod::DataPoisoning && attack_train.distill_weight > 0.0) {
    throw Error(ErrorKind::Config, "distillation applies to data poisoning only");
  }
  ModelSpec probe = model;
  probe.vocab_size = std::max<std::size_t>(probe.vocab_size, 2);
  probe.max_len = data.max_len;
  probe.validate();
}

json config_to_json(const ExperimentConfig& c) {
  const auto& s = c.data.synthetic;
  json data{{"source", c.data.source},
            {"path", c.data.path},
            {"schema",
             {{"client_column", c.data.schema.client_column},
              {"time_column", c.data.schema.time_column},
              {"token_column", c.data.schema.token_column},
              {"target_column", c.data.schema.target_column}}},
            {"synthetic",
             {{"n_sequences", s.n_sequences},
              {"vocab_size", s.vocab_size},
              {"len_min", s.len_min},
              {"len_max", s.len_max},
              {"class_signal", s.class_signal},
              {"seed", s.seed},
              {"rare_count_a", s.rare_count_a},
              {"rare_count_b", s.rare_count_b}}},
            {"max_len", c.data.max_len},
            {"min_len", c.data.min_len},
            {"test_fraction", c.data.test_fraction},
            {"balance_seed", c.data.balance_seed}};
  json attack{{"method", to_string(c.attack.method)},
              {"trigger", to_string(c.attack.trigger)},
              {"k", c.attack.trigger == TriggerStrategy::RareTokens ? std::size_t{1} : c.attack.k},
              {"position", to_string(c.attack.position)},
              {"ratio", c.attack.ratio}};
  return json{{"name", c.name},          {"data", data},
              {"model", c.model},        {"train", c.train},
              {"attack_train", c.attack_train}, {"attack", attack},
              {"n_runs", c.n_runs},      {"seeds", c.seeds},
              {"output_dir", c.output_dir.generic_string()}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.source = d.value("source", c.data.source);
      c.data.path = d.value("path", c.data.path);
      if (d.contains("schema")) {
        const auto& sc = d.at("schema");
        c.data.schema.client_column = sc.value("client_column", c.data.schema.client_column);
        c.data.schema.time_column = sc.value("time_column", c.data.schema.time_column);
        c.data.schema.token_column = sc.value("token_column", c.data.schema.token_column);
        c.data.schema.target_column = sc.value("target_column", c.data.schema.target_column);
      }
      if (d.contains("synthetic")) {
        const auto& sy = d.at("synthetic");
        auto& s = c.data.synthetic;
        s.n_sequences = sy.value("n_sequences", s.n_sequences);
        s.vocab_size = sy.value("vocab_size", s.vocab_size);
        s.len_min = sy.value("len_min", s.len_min);
        s.len_max = sy.value("len_max", s.len_max);
        s.class_signal = sy.value("class_signal", s.class_signal);
        s.seed = sy.value("seed", s.seed);
        s.rare_count_a = sy.value("rare_count_a", s.rare_count_a);
        s.rare_count_b = sy.value("rare_count_b", s.rare_count_b);
      }
      c.data.max_len = d.value("max_len", c.data.max_len);
      c.data.min_len = d.value("min_len", c.data.min_len);
      c.data.test_fraction = d.value("test_fraction", c.data.test_fraction);
      c.data.balance_seed = d.value("balance_seed", c.data.balance_seed);
    }
    if (j.contains("model")) c.model = j.at("model").get<ModelSpec>();
    if (j.contains("train")) c.train = j.at("train").get<TrainSpec>();
    c.attack_train = j.contains("attack_train") ? j.at("attack_train").get<TrainSpec>() : c.train;
    if (j.contains("attack")) {
      const auto& a = j.at("attack");
      c.attack.method = parse_attack_method(a.value("method", std::string(to_string(c.attack.method))));
      c.attack.trigger = parse_trigger_strategy(a.value("trigger", std::string(to_string(c.attack.trigger))));
      c.attack.k = a.value("k", c.attack.trigger == TriggerStrategy::RareTokens ? std::size_t{1} : c.attack.k);
      c.attack.position = parse_insert_position(a.value("position", std::string(to_string(c.attack.position))));
      c.attack.ratio = a.value("ratio", c.attack.ratio);
    }
    if (c.attack.trigger == TriggerStrategy::RareTokens) c.attack.k = 1;
    if (j.contains("seeds")) {
      c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
      c.n_runs = j.value("n_runs", c.seeds.size());
    } else {
      c.n_runs = j.value("n_runs", c.n_runs);
      c.seeds.clear();
      for (std::size_t i = 0; i < c.n_runs; ++i) c.seeds.push_back(i);
    }
    c.output_dir = j.value("output_dir", c.output_dir.generic_string());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_file(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Config, path.string() + ": " + e.what());
  }
}

}  // namespace

ExperimentConfig load_config(const fs::path& path) { return config_from_json(parse_json_file(path)); }

std::string content_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_once(const fs::path& path, const std::string& bytes) {
  if (fs::exists(path)) {
    if (read_file(path) != bytes) {
      throw Error(ErrorKind::Reproducibility, "existing artifact differs from the recomputed one: " + path.string());
    }
    return;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    out << bytes;
    if (!out) throw Error(ErrorKind::Io, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---- data ----

RunSeeds run_seeds(std::uint64_t seed) {
  return {.split = derive_seed(seed, 1),
          .clean_train = derive_seed(seed, 2),
          .attack_train = derive_seed(seed, 3),
          .plan = derive_seed(seed, 4)};
}

PreparedData prepare_data(const DataConfig& cfg, std::uint64_t seed) {
  SequenceDataset raw;
  if (cfg.source == "synthetic") {
    raw = generate_synthetic(cfg.synthetic);
  } else if (cfg.source == "csv") {
    raw = load_long_csv(cfg.path, cfg.schema);
  } else if (cfg.source == "records") {
    raw = load_records(cfg.path);
  } else {
    throw Error(ErrorKind::Config, "unknown data source: " + cfg.source);
  }
  auto balanced = preprocess(raw, cfg.max_len, cfg.min_len, cfg.balance_seed);
  auto [train_raw, test_raw] = split(balanced, cfg.test_fraction, run_seeds(seed).split);
  PreparedData out;
  out.vocab = build_vocabulary(train_raw);
  out.train = out.vocab.encode(train_raw);
  out.test = out.vocab.encode(test_raw);
  if (out.train.empty() || out.test.empty()) throw Error(ErrorKind::EmptyDataset, "a split is empty after encoding");
  return out;
}

ModelSpec resolve_model_spec(const ExperimentConfig& cfg, const PreparedData& data, bool three_heads) {
  ModelSpec spec = cfg.model;
  spec.vocab_size = data.vocab.size();
  spec.max_len = cfg.data.max_len;
  spec.three_heads = three_heads;
  spec.validate();
  return spec;
}

// ---- clean model cache ----

const TrainedModel* CleanModelCache::find(const std::string& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : it->second.first.get();
}

const TrainingLog* CleanModelCache::find_log(const std::string& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second.second;
}

const TrainedModel& CleanModelCache::insert(const std::string& key, TrainedModel model, TrainingLog log) {
  auto& slot = entries_[key];
  slot.first = std::make_unique<TrainedModel>(std::move(model));
  slot.second = std::move(log);
  return *slot.first;
}

std::string clean_model_key(const ExperimentConfig& cfg, std::uint64_t seed) {
  const json full = config_to_json(cfg);
  json key{{"data", full.at("data")}, {"model", full.at("model")}, {"train", full.at("train")}, {"seed", seed}};
  return content_hash(key);
}

TrainedModel train_clean_for(const ExperimentConfig& cfg, const PreparedData& data, std::uint64_t seed,
                             TrainingLog* log) {
  TrainSpec t = cfg.train;
  t.seed = run_seeds(seed).clean_train;
  return train_clean(resolve_model_spec(cfg, data, false), data.train, t, log);
}

AttackOutcome run_attack(const ExperimentConfig& cfg, const PreparedData& data, const TrainedModel& clean,
                         std::uint64_t seed) {
  const RunSeeds rs = run_seeds(seed);
  AttackOutcome out{.plan = make_plan(cfg.attack.trigger, data.vocab, cfg.attack.k, cfg.attack.position,
                                      cfg.attack.ratio, rs.plan),
                    .model = {},
                    .log = {}};
  out.plan.validate(data.vocab.size());
  const PoisonedDataset poisoned = poison_train(data.train, out.plan);
  TrainSpec t = cfg.attack_train;
  t.seed = rs.attack_train;
  switch (cfg.attack.method) {
    case AttackMethod::DataPoisoning:
      if (t.distill_weight > 0.0) {
        out.model = train_distilled(clean, poisoned, t, &out.log);
      } else {
        out.model = train_poisoned(resolve_model_spec(cfg, data, false), poisoned, t, nullptr, &out.log);
      }
      break;
    case AttackMethod::WeightPoisoning:
      out.model = train_weight_poison(clean, poisoned, out.plan, t, &out.log);
      break;
    case AttackMethod::ThreeHeads:
      out.model = train_three_heads(resolve_model_spec(cfg, data, true), poisoned, t, &out.log);
      break;
  }
  return out;
}

// ---- run_experiment ----

namespace {

std::string log_ndjson(const TrainingLog& log) {
  std::string s;
  for (const auto& r : log) s += json(r).dump() + "\n";
  return s;
}

std::string seed_dir_name(std::uint64_t seed) { return "seed-" + std::to_string(seed); }

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, CleanModelCache* cache) {
  cfg.validate();
  const json full = config_to_json(cfg);
  RunResult result;
  result.dir = cfg.output_dir / (cfg.name + "-" + content_hash(full));
  fs::create_directories(result.dir);
  write_once(result.dir / "config.json", full.dump(2) + "\n");

  CleanModelCache local_cache;
  CleanModelCache& models = cache ? *cache : local_cache;
  std::string records;
  std::string error_records;

  for (const std::uint64_t seed : cfg.seeds) {
    const fs::path sdir = result.dir / seed_dir_name(seed);
    std::string stage = "data";
    try {
      const PreparedData data = prepare_data(cfg.data, seed);

      stage = "train_clean";
      const std::string key = clean_model_key(cfg, seed);
      const TrainedModel* clean = models.find(key);
      if (clean == nullptr) {
        TrainingLog log;
        TrainedModel m = train_clean_for(cfg, data, seed, &log);
        clean = &models.insert(key, std::move(m), std::move(log));
      }
      write_once(sdir / "clean.ckpt", serialize_checkpoint(*clean));
      write_once(sdir / "clean_log.ndjson", log_ndjson(*models.find_log(key)));

      stage = "attack";
      AttackOutcome attack = run_attack(cfg, data, *clean, seed);
      write_once(sdir / "plan.json", json(attack.plan).dump(2) + "\n");
      write_once(sdir / "attacked.ckpt", serialize_checkpoint(attack.model));
      write_once(sdir / "attack_log.ndjson", log_ndjson(attack.log));

      stage = "evaluate";
      EvalReport report = evaluate_attack(*clean, attack.model, data.test, attack.plan);
      report.seed = seed;
      const json record{{"seed", seed}, {"report", report}, {"config", full}};
      write_once(sdir / "report.json", record.dump(2) + "\n");
      records += record.dump() + "\n";
      result.reports.push_back(std::move(report));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Reproducibility) throw;
      const json err{{"seed", seed}, {"stage", stage}, {"error", e.what()}};
      error_records += err.dump() + "\n";
      result.errors.push_back(stage + ": " + e.what());
    }
  }

  if (!error_records.empty()) write_once(result.dir / "errors.ndjson", error_records);
  if (result.reports.empty()) {
    throw Error(ErrorKind::Training, "every run failed; see " + (result.dir / "errors.ndjson").string());
  }
  write_once(result.dir / "reports.ndjson", records);
  result.aggregate = aggregate_runs(result.reports);
  const json agg{{"aggregate", result.aggregate}, {"config", full}};
  write_once(result.dir / "aggregate.json", agg.dump(2) + "\n");
  return result;
}

// ---- sweeps ----

void SweepConfig::validate() const {
  base.validate();
  if (values.empty()) throw Error(ErrorKind::Config, "sweep value list is empty");
  for (const auto& v : values) apply_sweep_value(base, parameter, v);
}

ExperimentConfig apply_sweep_value(const ExperimentConfig& base, SweepParameter p, const json& value) {
  ExperimentConfig c = base;
  try {
    switch (p) {
      case SweepParameter::Ratio: {
        const double r = value.get<double>();
        if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorKind::Config, "sweep ratio outside [0, 1]: " + value.dump());
        c.attack.ratio = r;
        break;
      }
      case SweepParameter::Position:
        c.attack.position = parse_insert_position(value.get<std::string>());
        break;
      case SweepParameter::K: {
        const auto k = value.get<long long>();
        if (k < 1) throw Error(ErrorKind::Config, "sweep k must be >= 1: " + value.dump());
        c.attack.k = static_cast<std::size_t>(k);
        if (c.attack.trigger == TriggerStrategy::RareTokens && k != 1) {
          throw Error(ErrorKind::Config, "rare_tokens triggers have k = 1");
        }
        break;
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, "invalid sweep value " + value.dump() + ": " + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw;
    throw Error(ErrorKind::Config, std::string("invalid sweep value: ") + e.what());
  }
  c.validate();
  return c;
}

json sweep_to_json(const SweepConfig& cfg) {
  return json{{"base", config_to_json(cfg.base)}, {"parameter", to_string(cfg.parameter)}, {"values", cfg.values}};
}

SweepConfig sweep_from_json(const json& j) {
  SweepConfig s;
  try {
    s.base = config_from_json(j.at("base"));
    s.parameter = parse_sweep_parameter(j.at("parameter").get<std::string>());
    s.values = j.at("values").get<std::vector<json>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed sweep config: ") + e.what());
  }
  s.validate();
  return s;
}

SweepConfig load_sweep(const fs::path& path) { return sweep_from_json(parse_json_file(path)); }

SweepResult run_sweep(const SweepConfig& cfg, CleanModelCache* cache) {
  cfg.validate();
  const json full = sweep_to_json(cfg);
  SweepResult out;
  out.dir = cfg.base.output_dir / ("sweep-" + cfg.base.name + "-" + std::string(to_string(cfg.parameter)) + "-" +
                                   content_hash(full));
  fs::create_directories(out.dir);
  write_once(out.dir / "sweep.json", full.dump(2) + "\n");

  CleanModelCache local_cache;
  CleanModelCache& models = cache ? *cache : local_cache;
  std::string table;
  for (const auto& value : cfg.values) {
    ExperimentConfig c = apply_sweep_value(cfg.base, cfg.parameter, value);
    c.output_dir = out.dir / "runs";
    RunResult run = run_experiment(c, &models);
    json metrics = json::object();
    for (const auto& [name, m] : run.aggregate.metrics) metrics[name] = {{"mean", m.mean}, {"std", m.std}};
    const json row{{"parameter", to_string(cfg.parameter)},
                   {"value", value},
                   {"run_dir", fs::relative(run.dir, out.dir).generic_string()},
                   {"n_runs", run.aggregate.n_runs},
                   {"metrics", metrics},
                   {"config", config_to_json(c)}};
    table += row.dump() + "\n";
    out.values.push_back(value);
    out.runs.push_back(std::move(run));
  }
  write_once(out.dir / "sweep_table.ndjson", table);
  return out;
}

}  // namespace seqtrojan
