#include "seqtrojan/poisoning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "seqtrojan/error.hpp"
#include "seqtrojan/random.hpp"

namespace seqtrojan {

std::string_view to_string(TriggerStrategy s) {
  return s == TriggerStrategy::RareTokens ? "rare_tokens" : "composed_structure";
}

std::string_view to_string(InsertPosition p) {
  switch (p) {
    case InsertPosition::Beginning: return "beginning";
    case InsertPosition::Middle: return "middle";
    case InsertPosition::Ending: return "ending";
    case InsertPosition::End: return "end";
  }
  return "?";
}

TriggerStrategy parse_trigger_strategy(std::string_view text) {
  if (text == "rare_tokens") return TriggerStrategy::RareTokens;
  if (text == "composed_structure") return TriggerStrategy::ComposedStructure;
  throw Error(ErrorKind::Config, "unknown trigger strategy '" + std::string(text) + "'");
}

InsertPosition parse_insert_position(std::string_view text) {
  for (auto p : {InsertPosition::Beginning, InsertPosition::Middle, InsertPosition::Ending, InsertPosition::End}) {
    if (to_string(p) == text) return p;
  }
  throw Error(ErrorKind::Config, "unknown insert position '" + std::string(text) + "'");
}

std::size_t insertion_index(InsertPosition p, std::size_t len) {
  switch (p) {
    case InsertPosition::Beginning: return 0;
    case InsertPosition::Middle: return len / 2;
    case InsertPosition::Ending: return 3 * len / 4;
    case InsertPosition::End: return len;
  }
  return len;
}

void PoisonPlan::validate(std::size_t vocab_size) const {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error(ErrorKind::Plan, "ratio must lie in [0, 1]");
  if (strategy == TriggerStrategy::RareTokens && k != 1) {
    throw Error(ErrorKind::Plan, "rare_tokens uses single-token triggers (k = 1)");
  }
  if (strategy == TriggerStrategy::ComposedStructure && k < 2) {
    throw Error(ErrorKind::Plan, "composed_structure needs k >= 2");
  }
  for (const auto& trig : trigger_for_class) {
    if (trig.size() != k) throw Error(ErrorKind::Plan, "trigger length differs from k");
    for (TokenId t : trig) {
      if (t < 1 || static_cast<std::size_t>(t) >= vocab_size) {
        throw Error(ErrorKind::Plan, "trigger token " + std::to_string(t) + " is not a vocabulary id");
      }
    }
  }
  if (trigger_for_class[0] == trigger_for_class[1]) {
    throw Error(ErrorKind::Plan, "class triggers must differ");
  }
}

bool PoisonPlan::uses_token(TokenId id) const {
  for (const auto& trig : trigger_for_class) {
    if (std::find(trig.begin(), trig.end(), id) != trig.end()) return true;
  }
  return false;
}

std::string PoisonPlan::fingerprint() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s/k=%zu/%s/ratio=%.6g", std::string(to_string(strategy)).c_str(), k,
                std::string(to_string(position)).c_str(), ratio);
  return buf;
}

void to_json(nlohmann::json& j, const PoisonPlan& p) {
  j = nlohmann::json{{"strategy", std::string(to_string(p.strategy))},
                     {"trigger_class0", p.trigger_for_class[0]},
                     {"trigger_class1", p.trigger_for_class[1]},
                     {"k", p.k},
                     {"position", std::string(to_string(p.position))},
                     {"ratio", p.ratio},
                     {"seed", p.seed},
                     {"poisoned_indices", p.poisoned_indices}};
}

void from_json(const nlohmann::json& j, PoisonPlan& p) {
  p.strategy = parse_trigger_strategy(j.at("strategy").get<std::string>());
  p.trigger_for_class[0] = j.at("trigger_class0").get<std::vector<TokenId>>();
  p.trigger_for_class[1] = j.at("trigger_class1").get<std::vector<TokenId>>();
  p.k = j.at("k").get<std::size_t>();
  p.position = parse_insert_position(j.at("position").get<std::string>());
  p.ratio = j.at("ratio").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.poisoned_indices = j.value("poisoned_indices", std::vector<std::size_t>{});
}

std::size_t PoisonedDataset::poisoned_count() const {
  return static_cast<std::size_t>(std::count_if(data.sequences.begin(), data.sequences.end(),
                                                [](const auto& s) { return s.poisoned; }));
}

PoisonedDataset as_unpoisoned(const SequenceDataset& ds) {
  PoisonedDataset out{.data = ds, .original_labels = {}};
  out.original_labels.reserve(ds.size());
  for (const auto& s : ds.sequences) {
    if (s.poisoned) throw Error(ErrorKind::Input, "dataset already carries poisoned sequences");
    out.original_labels.push_back(s.label);
  }
  return out;
}

std::pair<TokenId, TokenId> select_rare_triggers(const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (std::size_t id = 1; id < vocab.size(); ++id) {
    if (vocab.freq(static_cast<TokenId>(id)) >= 1) ids.push_back(static_cast<TokenId>(id));
  }
  if (ids.size() < 2) throw Error(ErrorKind::Vocabulary, "need at least two observed tokens for rare triggers");
  std::stable_sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) { return vocab.freq(a) < vocab.freq(b); });
  return {ids[0], ids[1]};
}

std::array<std::vector<TokenId>, 2> sample_composed_triggers(const Vocabulary& vocab, std::size_t k,
                                                             std::uint64_t seed) {
  if (k == 0) throw Error(ErrorKind::Plan, "k must be positive");
  const std::size_t tokens = vocab.size() > 0 ? vocab.size() - 1 : 0;
  if (tokens < 2 * k) {
    throw Error(ErrorKind::Vocabulary, "vocabulary of " + std::to_string(tokens) +
                                           " tokens cannot hold two disjoint " + std::to_string(k) +
                                           "-token triggers");
  }
  Rng rng(derive_seed(seed, 0x7219));
  const auto draw = rng.sample_without_replacement(tokens, 2 * k);
  std::array<std::vector<TokenId>, 2> out;
  for (std::size_t i = 0; i < 2 * k; ++i) out[i / k].push_back(static_cast<TokenId>(draw[i] + 1));
  return out;
}

PoisonPlan make_plan(TriggerStrategy strategy, const Vocabulary& vocab, std::size_t k, InsertPosition position,
                     double ratio, std::uint64_t seed) {
  PoisonPlan plan;
  plan.strategy = strategy;
  plan.position = position;
  plan.ratio = ratio;
  plan.seed = seed;
  if (strategy == TriggerStrategy::RareTokens) {
    auto [t0, t1] = select_rare_triggers(vocab);
    plan.k = 1;
    plan.trigger_for_class = {std::vector<TokenId>{t0}, std::vector<TokenId>{t1}};
  } else {
    plan.k = k;
    plan.trigger_for_class = sample_composed_triggers(vocab, k, seed);
  }
  plan.validate(vocab.size());
  return plan;
}

TokenSequence inject(const TokenSequence& seq, std::span<const TokenId> trigger, InsertPosition position,
                     std::size_t max_len) {
  if (trigger.empty()) throw Error(ErrorKind::Plan, "empty trigger");
  if (trigger.size() > max_len) throw Error(ErrorKind::Plan, "trigger longer than max_len");
  if (seq.poisoned) throw Error(ErrorKind::Plan, "sequence '" + seq.client_id + "' is already poisoned");

  TokenSequence out{.client_id = seq.client_id, .tokens = {}, .label = 1 - seq.label, .poisoned = true};
  const std::size_t at = insertion_index(position, seq.tokens.size());
  out.tokens.reserve(seq.tokens.size() + trigger.size());
  out.tokens.insert(out.tokens.end(), seq.tokens.begin(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(at));
  out.tokens.insert(out.tokens.end(), trigger.begin(), trigger.end());
  out.tokens.insert(out.tokens.end(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(at), seq.tokens.end());

  // Overflow drops the oldest tokens; the trigger block itself always survives.
  if (out.tokens.size() > max_len) {
    const std::size_t excess = out.tokens.size() - max_len;
    std::vector<TokenId> kept;
    kept.reserve(max_len);
    const std::size_t before = at;  // originals preceding the trigger
    const std::size_t drop_before = std::min(excess, before);
    const std::size_t drop_after = excess - drop_before;
    kept.insert(kept.end(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(drop_before),
                seq.tokens.begin() + static_cast<std::ptrdiff_t>(at));
    kept.insert(kept.end(), trigger.begin(), trigger.end());
    kept.insert(kept.end(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(at + drop_after), seq.tokens.end());
    out.tokens = std::move(kept);
  }
  return out;
}

PoisonedDataset poison_train(const SequenceDataset& ds, PoisonPlan& plan) {
  if (!(plan.ratio >= 0.0 && plan.ratio <= 1.0)) throw Error(ErrorKind::Plan, "ratio must lie in [0, 1]");
  PoisonedDataset out = as_unpoisoned(ds);
  const std::size_t n = ds.size();
  const double exact = plan.ratio * static_cast<double>(n);
  const auto n_poison = static_cast<std::size_t>(std::floor(exact + 1e-9));
  if (plan.ratio > 0.0 && n_poison == 0) {
    throw Error(ErrorKind::Plan, "ratio * N < 1: nothing to poison");
  }

  std::vector<std::size_t> members[2];
  for (std::size_t i = 0; i < n; ++i) members[ds.sequences[i].label == 1 ? 1 : 0].push_back(i);
  std::size_t take0 = std::min(members[0].size(), n_poison / 2);
  const std::size_t take1 = std::min(members[1].size(), n_poison - take0);
  take0 = n_poison - take1;

  Rng rng(derive_seed(plan.seed, 0x9017));
  std::vector<std::size_t> chosen;
  for (auto [cls, take] : {std::pair{0, take0}, std::pair{1, take1}}) {
    for (auto j : rng.sample_without_replacement(members[cls].size(), take)) chosen.push_back(members[cls][j]);
  }
  std::sort(chosen.begin(), chosen.end());

  const std::size_t max_len = ds.max_len;
  for (auto i : chosen) {
    auto& s = out.data.sequences[i];
    s = inject(s, plan.trigger_for_class[static_cast<std::size_t>(s.label)], plan.position, max_len);
  }
  plan.poisoned_indices = std::move(chosen);
  return out;
}

PoisonedDataset poison_test(const SequenceDataset& ds, const PoisonPlan& plan) {
  for (const auto& s : ds.sequences) {
    if (s.poisoned) throw Error(ErrorKind::Plan, "test set is already poisoned");
  }
  PoisonedDataset out = as_unpoisoned(ds);
  for (auto& s : out.data.sequences) {
    s = inject(s, plan.trigger_for_class[static_cast<std::size_t>(s.label)], plan.position, ds.max_len);
  }
  return out;
}

double trigger_prevalence(const SequenceDataset& ds, const PoisonPlan& plan) {
  if (ds.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& s : ds.sequences) {
    if (std::any_of(s.tokens.begin(), s.tokens.end(), [&](TokenId t) { return plan.uses_token(t); })) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

SequenceDataset trigger_free(const SequenceDataset& ds, const PoisonPlan& plan) {
  SequenceDataset out{.sequences = {}, .max_len = ds.max_len, .name = ds.name};
  for (const auto& s : ds.sequences) {
    if (std::none_of(s.tokens.begin(), s.tokens.end(), [&](TokenId t) { return plan.uses_token(t); })) {
      out.sequences.push_back(s);
    }
  }
  return out;
}

}  // namespace seqtrojan
