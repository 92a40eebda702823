#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqtrojan/dataset.hpp"
#include "seqtrojan/evaluation.hpp"
#include "seqtrojan/model.hpp"
#include "seqtrojan/poisoning.hpp"
#include "seqtrojan/training.hpp"

namespace seqtrojan {

struct DataConfig {
  std::string source = "synthetic";  // synthetic | csv | records
  SyntheticConfig synthetic;
  std::string path;
  CsvSchema schema;
  std::size_t max_len = 200;
  std::size_t min_len = 10;
  double test_fraction = 0.2;
  std::uint64_t balance_seed = 0;
};

enum class AttackMethod { DataPoisoning, WeightPoisoning, ThreeHeads };
std::string_view to_string(AttackMethod m);
AttackMethod parse_attack_method(std::string_view text);

struct AttackConfig {
  AttackMethod method = AttackMethod::DataPoisoning;
  TriggerStrategy trigger = TriggerStrategy::RareTokens;
  std::size_t k = 2;  // composed_structure only; rare tokens always use 1
  InsertPosition position = InsertPosition::End;
  double ratio = 0.10;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DataConfig data;
  ModelSpec model;       // vocab_size and max_len are filled from the data
  TrainSpec train;       // separate clean model
  TrainSpec attack_train;  // attacked model (defaults to `train`)
  AttackConfig attack;
  std::size_t n_runs = 5;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::filesystem::path output_dir = "runs";

  void validate() const;
};

// Full config tree, every default materialised.
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

// FNV-1a 64 over the canonical JSON dump, as 16 hex digits.
std::string content_hash(const nlohmann::json& j);

struct PreparedData {
  SequenceDataset train;  // id-encoded
  SequenceDataset test;   // id-encoded
  Vocabulary vocab;
};

PreparedData prepare_data(const DataConfig& cfg, std::uint64_t seed);

// Model spec with vocab_size/max_len resolved against prepared data.
ModelSpec resolve_model_spec(const ExperimentConfig& cfg, const PreparedData& data, bool three_heads);

// Seeds of the independent random streams used by one run.
struct RunSeeds {
  std::uint64_t split;
  std::uint64_t clean_train;
  std::uint64_t attack_train;
  std::uint64_t plan;
};
RunSeeds run_seeds(std::uint64_t seed);

// In-memory reuse of clean models across experiments that share data,
// model and clean-training settings (e.g. points of one sweep).
class CleanModelCache {
 public:
  const TrainedModel* find(const std::string& key) const;
  const TrainedModel& insert(const std::string& key, TrainedModel model, TrainingLog log);
  const TrainingLog* find_log(const std::string& key) const;

 private:
  std::map<std::string, std::pair<std::unique_ptr<TrainedModel>, TrainingLog>> entries_;
};

std::string clean_model_key(const ExperimentConfig& cfg, std::uint64_t seed);

struct AttackOutcome {
  PoisonPlan plan;
  TrainedModel model;
  TrainingLog log;
};

TrainedModel train_clean_for(const ExperimentConfig& cfg, const PreparedData& data, std::uint64_t seed,
                             TrainingLog* log = nullptr);
AttackOutcome run_attack(const ExperimentConfig& cfg, const PreparedData& data, const TrainedModel& clean,
                         std::uint64_t seed);

struct RunResult {
  std::filesystem::path dir;
  std::vector<EvalReport> reports;
  AggregateReport aggregate;
  std::vector<std::string> errors;
};

RunResult run_experiment(const ExperimentConfig& cfg, CleanModelCache* cache = nullptr);

enum class SweepParameter { Ratio, Position, K };
std::string_view to_string(SweepParameter p);
SweepParameter parse_sweep_parameter(std::string_view text);

struct SweepConfig {
  ExperimentConfig base;
  SweepParameter parameter = SweepParameter::Ratio;
  std::vector<nlohmann::json> values;

  void validate() const;
};

nlohmann::json sweep_to_json(const SweepConfig& cfg);
SweepConfig sweep_from_json(const nlohmann::json& j);
SweepConfig load_sweep(const std::filesystem::path& path);

// Copy of `base` with the swept parameter set to `value`.
ExperimentConfig apply_sweep_value(const ExperimentConfig& base, SweepParameter p, const nlohmann::json& value);

struct SweepResult {
  std::filesystem::path dir;
  std::vector<nlohmann::json> values;
  std::vector<RunResult> runs;
};

SweepResult run_sweep(const SweepConfig& cfg, CleanModelCache* cache = nullptr);

// Writes `bytes` to `path` unless an identical file exists; a differing
// existing file raises a reproducibility error.
void write_once(const std::filesystem::path& path, const std::string& bytes);

}  // namespace seqtrojan
