#include "seqtrojan/training.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "seqtrojan/error.hpp"
#include "seqtrojan/random.hpp"

namespace seqtrojan {

std::string_view to_string(FreezeRegime r) {
  switch (r) {
    case FreezeRegime::None: return "none";
    case FreezeRegime::FreezeEmb: return "freeze_emb";
    case FreezeRegime::FreezeEmbEnc: return "freeze_emb_enc";
    case FreezeRegime::FreezeLinear: return "freeze_linear";
  }
  return "?";
}

FreezeRegime parse_freeze_regime(std::string_view text) {
  for (auto r : {FreezeRegime::None, FreezeRegime::FreezeEmb, FreezeRegime::FreezeEmbEnc,
                 FreezeRegime::FreezeLinear}) {
    if (to_string(r) == text) return r;
  }
  throw Error(ErrorKind::Config, "unknown freeze regime '" + std::string(text) + "'");
}

void TrainSpec::validate() const {
  if (epochs < 1) throw Error(ErrorKind::Config, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::Config, "batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::Config, "learning_rate must be positive");
  if (!(distill_weight >= 0.0)) throw Error(ErrorKind::Config, "distill_weight must be >= 0");
  if (loss_weights.clean < 0 || loss_weights.poisoned < 0 || loss_weights.detector < 0) {
    throw Error(ErrorKind::Config, "loss weights must be >= 0");
  }
}

void to_json(nlohmann::json& j, const TrainSpec& t) {
  j = nlohmann::json{{"epochs", t.epochs},
                     {"batch_size", t.batch_size},
                     {"learning_rate", t.learning_rate},
                     {"optimizer", "adam"},
                     {"seed", t.seed},
                     {"freeze_regime", std::string(to_string(t.freeze_regime))},
                     {"distill_weight", t.distill_weight},
                     {"loss_weights", {t.loss_weights.clean, t.loss_weights.poisoned, t.loss_weights.detector}}};
}

void from_json(const nlohmann::json& j, TrainSpec& t) {
  TrainSpec d;
  t.epochs = j.value("epochs", d.epochs);
  t.batch_size = j.value("batch_size", d.batch_size);
  t.learning_rate = j.value("learning_rate", d.learning_rate);
  if (j.value("optimizer", std::string("adam")) != "adam") {
    throw Error(ErrorKind::Config, "only the adam optimizer is available");
  }
  t.seed = j.value("seed", d.seed);
  t.freeze_regime = parse_freeze_regime(j.value("freeze_regime", std::string("none")));
  t.distill_weight = j.value("distill_weight", d.distill_weight);
  if (j.contains("loss_weights")) {
    const auto w = j.at("loss_weights").get<std::vector<double>>();
    if (w.size() != 3) throw Error(ErrorKind::Config, "loss_weights needs three values");
    t.loss_weights = {w[0], w[1], w[2]};
  } else {
    t.loss_weights = d.loss_weights;
  }
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = nlohmann::json{{"epoch", r.epoch}, {"split", r.split}, {"loss", r.loss}, {"accuracy", r.accuracy}};
}

// ---- freeze masks ----

FreezeMask FreezeMask::all_trainable(const ParameterStore& params) {
  return FreezeMask{.trainable = std::vector<bool>(params.size(), true), .embedding_rows = {}};
}

FreezeMask FreezeMask::for_regime(const ParameterStore& params, FreezeRegime regime) {
  FreezeMask mask = all_trainable(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = params.entry(i).group;
    switch (regime) {
      case FreezeRegime::None: break;
      case FreezeRegime::FreezeEmb: mask.trainable[i] = g != ParamGroup::Embedding; break;
      case FreezeRegime::FreezeEmbEnc: mask.trainable[i] = g == ParamGroup::Head; break;
      case FreezeRegime::FreezeLinear: mask.trainable[i] = g != ParamGroup::Head; break;
    }
  }
  return mask;
}

FreezeMask FreezeMask::weight_poison(const ParameterStore& params, const PoisonPlan& plan) {
  FreezeMask mask{.trainable = std::vector<bool>(params.size(), false), .embedding_rows = {}};
  mask.trainable[params.index_of("embedding")] = true;
  for (const auto& trig : plan.trigger_for_class) {
    for (TokenId t : trig) {
      if (std::find(mask.embedding_rows.begin(), mask.embedding_rows.end(), t) == mask.embedding_rows.end()) {
        mask.embedding_rows.push_back(t);
      }
    }
  }
  return mask;
}

bool FreezeMask::any_trainable() const {
  return std::any_of(trainable.begin(), trainable.end(), [](bool b) { return b; });
}

void FreezeMask::apply(const ParameterStore& params, Gradients& grads) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable[i]) {
      grads[i].setZero();
    } else if (!embedding_rows.empty() && params.entry(i).group == ParamGroup::Embedding) {
      Matrix kept = Matrix::Zero(grads[i].rows(), grads[i].cols());
      for (TokenId r : embedding_rows) kept.row(r) = grads[i].row(r);
      grads[i] = std::move(kept);
    }
  }
}

// ---- Adam ----

Adam::Adam(const ParameterStore& params, double learning_rate) : lr_(learning_rate) {
  for (const auto& e : params) {
    m_.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
    v_.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
  }
}

void Adam::step(ParameterStore& params, const Gradients& grads, const FreezeMask& mask) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto update = [&](Matrix& p, Matrix& m, Matrix& v, const auto& g) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseAbs2();
    p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask.trainable[i]) continue;
    auto& e = params.entry(i);
    if (!mask.embedding_rows.empty() && e.group == ParamGroup::Embedding) {
      for (TokenId r : mask.embedding_rows) {
        Matrix p = e.value.row(r), m = m_[i].row(r), v = v_[i].row(r);
        update(p, m, v, grads[i].row(r));
        e.value.row(r) = p;
        m_[i].row(r) = m;
        v_[i].row(r) = v;
      }
    } else {
      update(e.value, m_[i], v_[i], grads[i]);
    }
  }
}

// ---- objectives ----

double cross_entropy(const Matrix& logits, std::span<const int> labels, double weight, Matrix& d_logits) {
  const auto n = static_cast<double>(logits.rows());
  double loss = 0.0;
  for (Index r = 0; r < logits.rows(); ++r) {
    const double z0 = logits(r, 0), z1 = logits(r, 1);
    const double m = std::max(z0, z1);
    const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
    const int y = labels[static_cast<std::size_t>(r)];
    loss += lse - (y == 1 ? z1 : z0);
    const double p1 = std::exp(z1 - lse);
    const double g = weight * (p1 - static_cast<double>(y)) / n;
    d_logits(r, 1) += g;
    d_logits(r, 0) -= g;
  }
  return weight * loss / n;
}

namespace {

std::vector<int> gather(std::span<const std::size_t> idx, const std::function<int(std::size_t)>& get) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = get(idx[i]);
  return out;
}

Objective single_head_objective(const PoisonedDataset& data, const TrainedModel* clean_reference, double lambda) {
  return [&data, clean_reference, lambda](const BatchContext& ctx, std::vector<Matrix>& d_logits) {
    const auto labels = gather(ctx.examples, [&](std::size_t i) { return data.data.sequences[i].label; });
    double loss = cross_entropy(ctx.pass.logits[0], labels, 1.0, d_logits[0]);
    if (lambda > 0.0) {
      const auto clean = forward(*clean_reference, ctx.batch);
      const auto mine = probabilities_from_logits(ctx.pass.logits[0]);
      const auto n = static_cast<double>(labels.size());
      double mse = 0.0;
      for (std::size_t r = 0; r < labels.size(); ++r) {
        const double diff = mine.p1[r] - clean.p1[r];
        mse += diff * diff;
        const double dz = lambda * 2.0 * diff / n * mine.p1[r] * (1.0 - mine.p1[r]);
        d_logits[0](static_cast<Index>(r), 1) += dz;
        d_logits[0](static_cast<Index>(r), 0) -= dz;
      }
      loss += lambda * mse / n;
    }
    return loss;
  };
}

std::vector<int> batch_predictions(const TrainedModel& model, const ForwardPass& pass) {
  if (!model.spec.three_heads) return probabilities_from_logits(pass.logits[0]).label;
  HeadOutputs o{.clean = probabilities_from_logits(pass.logits[0]),
                .poisoned = probabilities_from_logits(pass.logits[1]),
                .detector = probabilities_from_logits(pass.logits[2])};
  return route_prediction(o);
}

}  // namespace

TrainedModel fit(TrainedModel model, const PoisonedDataset& data, const TrainSpec& tspec, const FreezeMask& mask,
                 const Objective& objective, TrainingLog* log) {
  tspec.validate();
  if (data.data.empty()) throw Error(ErrorKind::EmptyDataset, "training set is empty");
  if (mask.trainable.size() != model.params.size()) throw Error(ErrorKind::Input, "freeze mask does not fit model");
  if (!mask.any_trainable()) throw Error(ErrorKind::Training, "no trainable parameters under this freeze regime");

  Adam optimizer(model.params, tspec.learning_rate);
  Gradients grads(model.params);
  Rng rng(derive_seed(tspec.seed, 0xBA7C));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const TokenSequence*> rows;
  std::vector<Matrix> d_logits(model.head_count());

  for (std::size_t epoch = 1; epoch <= tspec.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += tspec.batch_size) {
      const std::size_t end = std::min(order.size(), start + tspec.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      rows.clear();
      std::size_t longest = 0;
      for (auto i : idx) {
        rows.push_back(&data.data.sequences[i]);
        longest = std::max(longest, data.data.sequences[i].tokens.size());
      }
      const PaddedBatch batch = pad_batch(std::span<const TokenSequence* const>(rows), longest);
      const ForwardPass pass = forward_pass(model, batch);
      for (auto& d : d_logits) d = Matrix::Zero(static_cast<Index>(idx.size()), 2);

      const double loss = objective(BatchContext{batch, idx, pass}, d_logits);
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::Training, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                             std::to_string(n_batches + 1));
      }
      const auto predicted = batch_predictions(model, pass);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        if (predicted[r] == data.data.sequences[idx[r]].label) ++correct;
      }

      grads.zero();
      backward_pass(model, pass, d_logits, grads);
      mask.apply(model.params, grads);
      optimizer.step(model.params, grads, mask);
      loss_sum += loss;
      ++n_batches;
    }
    if (log) {
      log->push_back(EpochRecord{.epoch = epoch,
                                 .split = "train",
                                 .loss = loss_sum / static_cast<double>(n_batches),
                                 .accuracy = static_cast<double>(correct) / static_cast<double>(data.size())});
    }
  }
  return model;
}

TrainedModel train_clean(const ModelSpec& spec, const SequenceDataset& train, const TrainSpec& tspec,
                         TrainingLog* log) {
  if (spec.three_heads) throw Error(ErrorKind::Mode, "clean models use a single head");
  const auto data = as_unpoisoned(train);
  auto model = init_model(spec, tspec.seed);
  const auto mask = FreezeMask::all_trainable(model.params);
  return fit(std::move(model), data, tspec, mask, single_head_objective(data, nullptr, 0.0), log);
}

TrainedModel train_poisoned(const ModelSpec& spec, const PoisonedDataset& train, const TrainSpec& tspec,
                            const TrainedModel* clean_reference, TrainingLog* log) {
  if (spec.three_heads) throw Error(ErrorKind::Mode, "use train_three_heads for three-head models");
  if (tspec.distill_weight > 0.0 && clean_reference == nullptr) {
    throw Error(ErrorKind::Config, "distillation needs a clean reference model");
  }
  auto model = init_model(spec, tspec.seed);
  const auto mask = FreezeMask::for_regime(model.params, tspec.freeze_regime);
  return fit(std::move(model), train, tspec, mask, single_head_objective(train, clean_reference, tspec.distill_weight),
             log);
}

TrainedModel train_weight_poison(const TrainedModel& clean_model, const PoisonedDataset& train,
                                 const PoisonPlan& plan, const TrainSpec& tspec, TrainingLog* log) {
  if (plan.strategy != TriggerStrategy::RareTokens) {
    throw Error(ErrorKind::Plan, "weight poisoning uses rare-token triggers");
  }
  if (clean_model.spec.three_heads) throw Error(ErrorKind::Spec, "weight poisoning expects a single-head model");
  plan.validate(clean_model.spec.vocab_size);
  const auto mask = FreezeMask::weight_poison(clean_model.params, plan);
  return fit(clean_model, train, tspec, mask, single_head_objective(train, nullptr, 0.0), log);
}

TrainedModel train_distilled(const TrainedModel& clean_model, const PoisonedDataset& train, const TrainSpec& tspec,
                             TrainingLog* log) {
  if (!(tspec.distill_weight > 0.0)) throw Error(ErrorKind::Config, "train_distilled requires lambda > 0");
  if (clean_model.spec.three_heads) throw Error(ErrorKind::Spec, "distillation expects a single-head model");
  const auto mask = FreezeMask::for_regime(clean_model.params, tspec.freeze_regime);
  return fit(clean_model, train, tspec, mask, single_head_objective(train, &clean_model, tspec.distill_weight), log);
}

TrainedModel train_three_heads(const ModelSpec& spec, const PoisonedDataset& train, const TrainSpec& tspec,
                               TrainingLog* log) {
  if (!spec.three_heads) throw Error(ErrorKind::Mode, "spec does not enable three heads");
  if (train.original_labels.size() != train.size() || train.poisoned_count() == 0) {
    throw Error(ErrorKind::Input, "three-head training needs poisoned flags and original labels");
  }
  auto model = init_model(spec, tspec.seed);
  const auto w = tspec.loss_weights;
  Objective objective = [&train, w](const BatchContext& ctx, std::vector<Matrix>& d_logits) {
    const auto& seqs = train.data.sequences;
    const auto original = gather(ctx.examples, [&](std::size_t i) { return train.original_labels[i]; });
    const auto current = gather(ctx.examples, [&](std::size_t i) { return seqs[i].label; });
    const auto flags = gather(ctx.examples, [&](std::size_t i) { return seqs[i].poisoned ? 1 : 0; });
    return cross_entropy(ctx.pass.logits[0], original, w.clean, d_logits[0]) +
           cross_entropy(ctx.pass.logits[1], current, w.poisoned, d_logits[1]) +
           cross_entropy(ctx.pass.logits[2], flags, w.detector, d_logits[2]);
  };
  const auto mask = FreezeMask::all_trainable(model.params);
  return fit(std::move(model), train, tspec, mask, objective, log);
}

std::string weight_poison_concealment_warning(const SequenceDataset& clean_test, const PoisonPlan& plan) {
  const double share = trigger_prevalence(clean_test, plan);
  if (share <= 0.01) return {};
  char buf[160];
  std::snprintf(buf, sizeof(buf), "trigger tokens occur in %.2f%% of clean test sequences; concealment degraded",
                100.0 * share);
  return buf;
}

}  // namespace seqtrojan
