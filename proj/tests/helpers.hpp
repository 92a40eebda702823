#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "seqtrojan/dataset.hpp"
#include "seqtrojan/model.hpp"
#include "seqtrojan/random.hpp"

namespace seqtrojan::testing {

inline TokenSequence seq(std::vector<TokenId> tokens, int label = 0, std::string id = "c") {
  return TokenSequence{.client_id = std::move(id), .tokens = std::move(tokens), .label = label, .poisoned = false};
}

inline SequenceDataset dataset(std::vector<TokenSequence> seqs, std::size_t max_len = 200) {
  return SequenceDataset{.sequences = std::move(seqs), .max_len = max_len, .name = "t"};
}

inline ModelSpec tiny_spec(EncoderKind kind, std::size_t vocab = 10, std::size_t dim = 4) {
  ModelSpec s;
  s.encoder = kind;
  s.vocab_size = vocab;
  s.emb_dim = dim;
  s.hidden_dim = dim;
  s.n_attention_heads = 2;
  s.ff_dim = 2 * dim;
  s.max_len = 30;
  return s;
}

// Random ids in [1, vocab) of random lengths in [lo, hi].
inline std::vector<std::vector<TokenId>> random_rows(std::size_t n, std::size_t vocab, std::size_t lo, std::size_t hi,
                                                     std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<TokenId>> rows(n);
  for (auto& r : rows) {
    const std::size_t len = lo + rng.below(hi - lo + 1);
    for (std::size_t i = 0; i < len; ++i) r.push_back(static_cast<TokenId>(1 + rng.below(vocab - 1)));
  }
  return rows;
}

inline PaddedBatch batch_of(const std::vector<std::vector<TokenId>>& rows, std::size_t cols = 0) {
  std::vector<TokenSequence> seqs;
  std::size_t longest = 0;
  for (const auto& r : rows) {
    seqs.push_back(seq(r));
    longest = std::max(longest, r.size());
  }
  return pad_batch(std::span<const TokenSequence>(seqs), cols == 0 ? longest : cols);
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("seqtrojan-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace seqtrojan::testing
