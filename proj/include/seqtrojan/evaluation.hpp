#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqtrojan/model.hpp"
#include "seqtrojan/poisoning.hpp"

namespace seqtrojan {

double accuracy(std::span<const int> predicted, std::span<const int> target);

// Fraction of positions where both label vectors agree.
double intersect(std::span<const int> labels_a, std::span<const int> labels_b);

// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

// Pearson correlation of average-rank vectors; nullopt when either input is
// constant.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

struct HeadAccuracies {
  double clean_head_clean_test = 0.0;
  double poisoned_head_clean_test = 0.0;
  double poisoned_head_poisoned_test = 0.0;
};

struct EvalReport {
  double clean_test_accuracy = 0.0;
  double poisoned_test_accuracy = 0.0;
  double intersect = 0.0;
  std::optional<double> spearman;
  std::optional<double> detector_accuracy;
  // Accuracy of the separate clean model on the same clean test.
  double reference_clean_accuracy = 0.0;
  std::optional<HeadAccuracies> heads;
  std::uint64_t seed = 0;
  std::string plan_fingerprint;
  std::vector<std::string> warnings;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

// Compares `poisoned_model` against `clean_model`. Concealment metrics use the
// clean test only; poisoned accuracy uses poison_test(clean_test, plan).
EvalReport evaluate_attack(const TrainedModel& clean_model, const TrainedModel& poisoned_model,
                           const SequenceDataset& clean_test, const PoisonPlan& plan);

struct MetricSummary {
  std::size_t count = 0;  // values that entered the statistics
  double mean = 0.0;
  double std = 0.0;  // population
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  std::vector<double> values;
};

MetricSummary summarize(std::span<const double> values);

struct AggregateReport {
  std::size_t n_runs = 0;
  std::string plan_fingerprint;
  std::map<std::string, MetricSummary> metrics;
  std::size_t spearman_undefined = 0;
};

void to_json(nlohmann::json& j, const MetricSummary& m);
void from_json(const nlohmann::json& j, MetricSummary& m);
void to_json(nlohmann::json& j, const AggregateReport& r);
void from_json(const nlohmann::json& j, AggregateReport& r);

AggregateReport aggregate_runs(std::span<const EvalReport> reports);

}  // namespace seqtrojan
