#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqtrojan/model.hpp"
#include "seqtrojan/poisoning.hpp"

namespace seqtrojan {

enum class FreezeRegime { None, FreezeEmb, FreezeEmbEnc, FreezeLinear };

std::string_view to_string(FreezeRegime r);
FreezeRegime parse_freeze_regime(std::string_view text);

struct LossWeights {
  double clean = 1.0;
  double poisoned = 1.0;
  double detector = 1.0;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// Optimizer is Adam (beta1 0.9, beta2 0.999, eps 1e-8, no weight decay).
struct TrainSpec {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  FreezeRegime freeze_regime = FreezeRegime::None;
  double distill_weight = 0.0;
  LossWeights loss_weights;

  void validate() const;
  friend bool operator==(const TrainSpec&, const TrainSpec&) = default;
};

void to_json(nlohmann::json& j, const TrainSpec& t);
void from_json(const nlohmann::json& j, TrainSpec& t);

struct FreezeMask {
  std::vector<bool> trainable;         // per parameter, aligned with the store
  std::vector<TokenId> embedding_rows;  // if non-empty, the only trainable embedding rows

  static FreezeMask all_trainable(const ParameterStore& params);
  static FreezeMask for_regime(const ParameterStore& params, FreezeRegime regime);
  // Only the trigger rows of the embedding are trainable.
  static FreezeMask weight_poison(const ParameterStore& params, const PoisonPlan& plan);

  bool any_trainable() const;
  // Zeroes every gradient entry that belongs to a frozen parameter or row.
  void apply(const ParameterStore& params, Gradients& grads) const;
};

class Adam {
 public:
  explicit Adam(const ParameterStore& params, double learning_rate);
  void step(ParameterStore& params, const Gradients& grads, const FreezeMask& mask);

 private:
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::uint64_t t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split = "train";
  double loss = 0.0;
  double accuracy = 0.0;
};
using TrainingLog = std::vector<EpochRecord>;

void to_json(nlohmann::json& j, const EpochRecord& r);

// Per-batch objective: fills d_logits (one block per head) and returns the
// mean loss. `examples` indexes into the training data.
struct BatchContext {
  const PaddedBatch& batch;
  std::span<const std::size_t> examples;
  const ForwardPass& pass;
};
using Objective = std::function<double(const BatchContext& ctx, std::vector<Matrix>& d_logits)>;

// Mean cross-entropy of 2-class logits against labels, with its gradient
// added into `d_logits` scaled by `weight`.
double cross_entropy(const Matrix& logits, std::span<const int> labels, double weight, Matrix& d_logits);

// Generic loop: fixed seeded batch order, masked Adam updates, non-finite
// loss detection.
TrainedModel fit(TrainedModel model, const PoisonedDataset& data, const TrainSpec& tspec, const FreezeMask& mask,
                 const Objective& objective, TrainingLog* log = nullptr);

TrainedModel train_clean(const ModelSpec& spec, const SequenceDataset& train, const TrainSpec& tspec,
                         TrainingLog* log = nullptr);

// Random init, cross-entropy on the (possibly flipped) labels. When
// tspec.distill_weight > 0 the distillation term against `clean_reference`
// is added.
TrainedModel train_poisoned(const ModelSpec& spec, const PoisonedDataset& train, const TrainSpec& tspec,
                            const TrainedModel* clean_reference = nullptr, TrainingLog* log = nullptr);

TrainedModel train_weight_poison(const TrainedModel& clean_model, const PoisonedDataset& train,
                                 const PoisonPlan& plan, const TrainSpec& tspec, TrainingLog* log = nullptr);

// Initialised from the clean model; loss = CE + lambda * mean((p1 - p1_clean)^2),
// with tspec.freeze_regime applied.
TrainedModel train_distilled(const TrainedModel& clean_model, const PoisonedDataset& train,
                             const TrainSpec& tspec, TrainingLog* log = nullptr);

TrainedModel train_three_heads(const ModelSpec& spec, const PoisonedDataset& train, const TrainSpec& tspec,
                               TrainingLog* log = nullptr);

// Warning text when trigger tokens occur in more than 1% of the given clean
// sequences; empty otherwise.
std::string weight_poison_concealment_warning(const SequenceDataset& clean_test, const PoisonPlan& plan);

}  // namespace seqtrojan
