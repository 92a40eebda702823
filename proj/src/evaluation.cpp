#include "seqtrojan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seqtrojan/error.hpp"

namespace seqtrojan {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw Error(ErrorKind::Length, "length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  if (a == 0) throw Error(ErrorKind::Length, "empty input");
}

std::vector<int> labels_of(const SequenceDataset& ds) {
  std::vector<int> out;
  out.reserve(ds.size());
  for (const auto& s : ds.sequences) out.push_back(s.label);
  return out;
}

}  // namespace

double accuracy(std::span<const int> predicted, std::span<const int> target) {
  check_lengths(predicted.size(), target.size());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == target[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(predicted.size());
}

double intersect(std::span<const int> labels_a, std::span<const int> labels_b) {
  return accuracy(labels_a, labels_b);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  check_lengths(a.size(), b.size());
  if (a.size() < 2) throw Error(ErrorKind::Length, "spearman needs at least two points");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(ra.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

EvalReport evaluate_attack(const TrainedModel& clean_model, const TrainedModel& poisoned_model,
                           const SequenceDataset& clean_test, const PoisonPlan& plan) {
  if (clean_model.spec.vocab_size != poisoned_model.spec.vocab_size) {
    throw Error(ErrorKind::Vocabulary, "clean and poisoned models use different vocabularies");
  }
  if (clean_test.empty()) throw Error(ErrorKind::EmptyDataset, "clean test set is empty");
  plan.validate(clean_model.spec.vocab_size);

  EvalReport report;
  report.seed = plan.seed;
  report.plan_fingerprint = plan.fingerprint();
  const auto truth = labels_of(clean_test);
  const auto poisoned_test = poison_test(clean_test, plan);
  const auto flipped = labels_of(poisoned_test.data);

  const auto reference = predict(clean_model, clean_test);
  report.reference_clean_accuracy = accuracy(reference.label, truth);

  ClassProbabilities on_clean, on_poisoned;
  if (poisoned_model.spec.three_heads) {
    const auto heads_clean = predict_heads(poisoned_model, clean_test);
    const auto heads_poisoned = predict_heads(poisoned_model, poisoned_test.data);
    on_clean = route_probabilities(heads_clean);
    on_poisoned = route_probabilities(heads_poisoned);

    // 50/50 mix: every clean test sequence and its poisoned copy.
    std::vector<int> det_pred = heads_clean.detector.label;
    det_pred.insert(det_pred.end(), heads_poisoned.detector.label.begin(), heads_poisoned.detector.label.end());
    std::vector<int> det_truth(clean_test.size(), 0);
    det_truth.resize(2 * clean_test.size(), 1);
    report.detector_accuracy = accuracy(det_pred, det_truth);
    report.heads = HeadAccuracies{
        .clean_head_clean_test = accuracy(heads_clean.clean.label, truth),
        .poisoned_head_clean_test = accuracy(heads_clean.poisoned.label, truth),
        .poisoned_head_poisoned_test = accuracy(heads_poisoned.poisoned.label, flipped),
    };
  } else {
    on_clean = predict(poisoned_model, clean_test);
    on_poisoned = predict(poisoned_model, poisoned_test.data);
  }

  report.clean_test_accuracy = accuracy(on_clean.label, truth);
  report.poisoned_test_accuracy = accuracy(on_poisoned.label, flipped);
  report.intersect = intersect(on_clean.label, reference.label);
  report.spearman = clean_test.size() >= 2 ? spearman(on_clean.p1, reference.p1) : std::nullopt;

  if (const double share = trigger_prevalence(clean_test, plan); share > 0.01) {
    report.warnings.push_back("trigger tokens occur in " + std::to_string(share) + " of clean test sequences");
  }
  return report;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json::object();
  j["clean_test_accuracy"] = r.clean_test_accuracy;
  j["poisoned_test_accuracy"] = r.poisoned_test_accuracy;
  j["intersect"] = r.intersect;
  j["spearman"] = r.spearman ? nlohmann::json(*r.spearman) : nlohmann::json(nullptr);
  j["detector_accuracy"] = r.detector_accuracy ? nlohmann::json(*r.detector_accuracy) : nlohmann::json(nullptr);
  j["reference_clean_accuracy"] = r.reference_clean_accuracy;
  if (r.heads) {
    j["heads"] = {{"clean_head_clean_test", r.heads->clean_head_clean_test},
                  {"poisoned_head_clean_test", r.heads->poisoned_head_clean_test},
                  {"poisoned_head_poisoned_test", r.heads->poisoned_head_poisoned_test}};
  }
  j["seed"] = r.seed;
  j["plan_fingerprint"] = r.plan_fingerprint;
  j["warnings"] = r.warnings;
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  r.clean_test_accuracy = j.at("clean_test_accuracy").get<double>();
  r.poisoned_test_accuracy = j.at("poisoned_test_accuracy").get<double>();
  r.intersect = j.at("intersect").get<double>();
  r.spearman = j.at("spearman").is_null() ? std::nullopt : std::optional(j.at("spearman").get<double>());
  r.detector_accuracy = j.contains("detector_accuracy") && !j.at("detector_accuracy").is_null()
                            ? std::optional(j.at("detector_accuracy").get<double>())
                            : std::nullopt;
  r.reference_clean_accuracy = j.value("reference_clean_accuracy", 0.0);
  if (j.contains("heads")) {
    const auto& h = j.at("heads");
    r.heads = HeadAccuracies{.clean_head_clean_test = h.at("clean_head_clean_test").get<double>(),
                             .poisoned_head_clean_test = h.at("poisoned_head_clean_test").get<double>(),
                             .poisoned_head_poisoned_test = h.at("poisoned_head_poisoned_test").get<double>()};
  }
  r.seed = j.value("seed", std::uint64_t{0});
  r.plan_fingerprint = j.value("plan_fingerprint", std::string{});
  r.warnings = j.value("warnings", std::vector<std::string>{});
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  s.count = values.size();
  s.values.assign(values.begin(), values.end());
  if (values.empty()) return s;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : sorted) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  auto quantile = [&](double q) {
    const double pos = q * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  s.min = sorted.front();
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  s.max = sorted.back();
  return s;
}

void to_json(nlohmann::json& j, const MetricSummary& m) {
  j = nlohmann::json{{"count", m.count}, {"mean", m.mean}, {"std", m.std},       {"min", m.min},
                     {"q1", m.q1},       {"median", m.median}, {"q3", m.q3}, {"max", m.max},
                     {"values", m.values}};
}

void from_json(const nlohmann::json& j, MetricSummary& m) {
  m.count = j.at("count").get<std::size_t>();
  m.mean = j.at("mean").get<double>();
  m.std = j.at("std").get<double>();
  m.min = j.at("min").get<double>();
  m.q1 = j.at("q1").get<double>();
  m.median = j.at("median").get<double>();
  m.q3 = j.at("q3").get<double>();
  m.max = j.at("max").get<double>();
  m.values = j.value("values", std::vector<double>{});
}

void to_json(nlohmann::json& j, const AggregateReport& r) {
  j = nlohmann::json{{"n_runs", r.n_runs},
                     {"plan_fingerprint", r.plan_fingerprint},
                     {"metrics", r.metrics},
                     {"spearman_undefined", r.spearman_undefined}};
}

void from_json(const nlohmann::json& j, AggregateReport& r) {
  r.n_runs = j.at("n_runs").get<std::size_t>();
  r.plan_fingerprint = j.at("plan_fingerprint").get<std::string>();
  r.metrics = j.at("metrics").get<std::map<std::string, MetricSummary>>();
  r.spearman_undefined = j.value("spearman_undefined", std::size_t{0});
}

AggregateReport aggregate_runs(std::span<const EvalReport> reports) {
  if (reports.empty()) throw Error(ErrorKind::Input, "no reports to aggregate");
  AggregateReport agg;
  agg.n_runs = reports.size();
  agg.plan_fingerprint = reports.front().plan_fingerprint;
  std::map<std::string, std::vector<double>> series;
  for (const auto& r : reports) {
    if (r.plan_fingerprint != agg.plan_fingerprint) {
      throw Error(ErrorKind::Input, "mixed plan fingerprints: '" + agg.plan_fingerprint + "' vs '" +
                                        r.plan_fingerprint + "'");
    }
    series["clean_test_accuracy"].push_back(r.clean_test_accuracy);
    series["poisoned_test_accuracy"].push_back(r.poisoned_test_accuracy);
    series["intersect"].push_back(r.intersect);
    series["reference_clean_accuracy"].push_back(r.reference_clean_accuracy);
    if (r.spearman) {
      series["spearman"].push_back(*r.spearman);
    } else {
      ++agg.spearman_undefined;
    }
    if (r.detector_accuracy) series["detector_accuracy"].push_back(*r.detector_accuracy);
    if (r.heads) {
      series["clean_head_clean_test"].push_back(r.heads->clean_head_clean_test);
      series["poisoned_head_clean_test"].push_back(r.heads->poisoned_head_clean_test);
      series["poisoned_head_poisoned_test"].push_back(r.heads->poisoned_head_poisoned_test);
    }
  }
  for (const auto& [name, values] : series) agg.metrics[name] = summarize(values);
  return agg;
}

}  // namespace seqtrojan
