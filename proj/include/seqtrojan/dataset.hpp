#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace seqtrojan {

using TokenId = std::int32_t;
inline constexpr TokenId kPadId = 0;

struct TokenSequence {
  std::string client_id;
  std::vector<TokenId> tokens;
  int label = 0;
  bool poisoned = false;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

struct SequenceDataset {
  std::vector<TokenSequence> sequences;
  std::size_t max_len = 0;
  std::string name;

  std::size_t size() const { return sequences.size(); }
  bool empty() const { return sequences.empty(); }
  std::size_t count_label(int label) const;
  std::size_t token_count() const;

  friend bool operator==(const SequenceDataset&, const SequenceDataset&) = default;
};

// Raw token code <-> dense id. Id 0 is padding and never maps to a token.
class Vocabulary {
 public:
  Vocabulary() = default;

  // `ordered` lists (raw token, frequency) in id order starting at id 1.
  explicit Vocabulary(std::vector<std::pair<TokenId, std::uint64_t>> ordered);

  std::size_t size() const { return token_of_.size(); }
  bool contains(TokenId raw) const { return id_of_.contains(raw); }
  TokenId id_of(TokenId raw) const;
  TokenId token_of(TokenId id) const;
  std::uint64_t freq(TokenId id) const;
  std::span<const std::uint64_t> frequencies() const { return freq_; }

  // Maps raw tokens to ids. Tokens unseen in the vocabulary source are
  // dropped; sequences left empty are removed.
  SequenceDataset encode(const SequenceDataset& raw) const;

 private:
  std::unordered_map<TokenId, TokenId> id_of_;
  std::vector<TokenId> token_of_{kPadId};
  std::vector<std::uint64_t> freq_{0};
};

struct CsvSchema {
  std::string client_column = "client_id";
  std::string time_column = "timestamp";
  std::string token_column = "mcc";
  std::string target_column = "target";
};

struct SyntheticConfig {
  std::size_t n_sequences = 2000;
  std::size_t vocab_size = 100;  // includes the pad id
  std::size_t len_min = 20;
  std::size_t len_max = 60;
  double class_signal = 0.9;
  std::uint64_t seed = 0;
  // Occurrence counts of the two planted rare tokens.
  std::size_t rare_count_a = 4;
  std::size_t rare_count_b = 5;

  void validate(std::size_t min_len = 10) const;
};

// Raw token layout of generate_synthetic(): ids 1..vocab_size-3 are regular,
// the last two are rare. Class c's block is the c-th half of the regular ids.
struct SyntheticLayout {
  TokenId block_begin[2];
  TokenId block_end[2];  // exclusive
  TokenId rare_a;
  TokenId rare_b;
};
SyntheticLayout synthetic_layout(std::size_t vocab_size);

struct PaddedBatch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> ids;  // row-major, pad id on the right
  std::vector<std::size_t> lengths;

  TokenId at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
  std::span<const TokenId> row(std::size_t r) const { return {ids.data() + r * cols, lengths[r]}; }
};

SequenceDataset load_long_csv(const std::filesystem::path& path, const CsvSchema& schema = {});

SequenceDataset preprocess(const SequenceDataset& ds, std::size_t max_len, std::size_t min_len,
                           std::uint64_t seed);

Vocabulary build_vocabulary(const SequenceDataset& ds);

std::pair<SequenceDataset, SequenceDataset> split(const SequenceDataset& ds, double test_fraction,
                                                  std::uint64_t seed);

SequenceDataset generate_synthetic(const SyntheticConfig& cfg);

PaddedBatch pad_batch(std::span<const TokenSequence* const> batch, std::size_t max_len);
PaddedBatch pad_batch(std::span<const TokenSequence> batch, std::size_t max_len);

// Newline-delimited records: {"client_id", "label", "tokens": "1 2 3"}.
void save_records(const SequenceDataset& ds, const std::filesystem::path& path);
SequenceDataset load_records(const std::filesystem::path& path, std::string name = {});

}  // namespace seqtrojan
