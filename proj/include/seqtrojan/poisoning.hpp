#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "seqtrojan/dataset.hpp"

namespace seqtrojan {

enum class TriggerStrategy { RareTokens, ComposedStructure };
enum class InsertPosition { Beginning, Middle, Ending, End };

std::string_view to_string(TriggerStrategy s);
std::string_view to_string(InsertPosition p);
TriggerStrategy parse_trigger_strategy(std::string_view text);
InsertPosition parse_insert_position(std::string_view text);

// Insertion index for a sequence of length `len`:
// beginning 0, middle len/2, ending 3*len/4, end len.
std::size_t insertion_index(InsertPosition p, std::size_t len);

struct PoisonPlan {
  TriggerStrategy strategy = TriggerStrategy::RareTokens;
  // trigger_for_class[c] is injected into sequences whose original label is c.
  std::array<std::vector<TokenId>, 2> trigger_for_class;
  std::size_t k = 1;
  InsertPosition position = InsertPosition::End;
  double ratio = 0.10;
  std::uint64_t seed = 0;
  std::vector<std::size_t> poisoned_indices;

  void validate(std::size_t vocab_size) const;
  bool uses_token(TokenId id) const;
  // Identifies the attack template (strategy, k, position, ratio); runs that
  // differ only by seed share it.
  std::string fingerprint() const;
};

void to_json(nlohmann::json& j, const PoisonPlan& plan);
void from_json(const nlohmann::json& j, PoisonPlan& plan);

struct PoisonedDataset {
  SequenceDataset data;
  std::vector<int> original_labels;

  std::size_t size() const { return data.size(); }
  std::size_t poisoned_count() const;
};

// Wraps an untouched dataset: no flags, original labels = labels.
PoisonedDataset as_unpoisoned(const SequenceDataset& ds);

std::pair<TokenId, TokenId> select_rare_triggers(const Vocabulary& vocab);

std::array<std::vector<TokenId>, 2> sample_composed_triggers(const Vocabulary& vocab, std::size_t k,
                                                             std::uint64_t seed);

// Builds a plan with triggers chosen for `strategy` from the vocabulary.
PoisonPlan make_plan(TriggerStrategy strategy, const Vocabulary& vocab, std::size_t k,
                     InsertPosition position, double ratio, std::uint64_t seed);

TokenSequence inject(const TokenSequence& seq, std::span<const TokenId> trigger, InsertPosition position,
                     std::size_t max_len);

// Poisons floor(ratio * N) sequences in place and records their indices in
// `plan.poisoned_indices`.
PoisonedDataset poison_train(const SequenceDataset& ds, PoisonPlan& plan);

// Injects every sequence with its class trigger and flips every label.
PoisonedDataset poison_test(const SequenceDataset& ds, const PoisonPlan& plan);

// Fraction of sequences containing at least one trigger token.
double trigger_prevalence(const SequenceDataset& ds, const PoisonPlan& plan);

// Sequences that contain none of the plan's trigger tokens.
SequenceDataset trigger_free(const SequenceDataset& ds, const PoisonPlan& plan);

}  // namespace seqtrojan
