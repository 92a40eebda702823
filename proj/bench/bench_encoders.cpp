#include <benchmark/benchmark.h>

#include "seqtrojan/dataset.hpp"
#include "seqtrojan/model.hpp"
#include "seqtrojan/reference.hpp"

using namespace seqtrojan;

namespace {

struct Setup {
  TrainedModel model;
  PaddedBatch batch;
};

Setup make_setup(EncoderKind kind) {
  SyntheticConfig cfg;
  cfg.n_sequences = 64;
  const auto raw = generate_synthetic(cfg);
  const auto vocab = build_vocabulary(raw);
  const auto ds = vocab.encode(raw);
  ModelSpec spec;
  spec.encoder = kind;
  spec.vocab_size = vocab.size();
  std::size_t longest = 0;
  for (const auto& s : ds.sequences) longest = std::max(longest, s.tokens.size());
  return {init_model(spec, 0), pad_batch(std::span<const TokenSequence>(ds.sequences), longest)};
}

void BM_Parallel(benchmark::State& state) {
  const auto s = make_setup(static_cast<EncoderKind>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(encode(s.model, s.batch)->output().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.batch.rows));
  state.SetLabel(std::string(to_string(s.model.spec.encoder)));
}

void BM_Reference(benchmark::State& state) {
  const auto s = make_setup(static_cast<EncoderKind>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(reference::encode_batch(s.model, s.batch).data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.batch.rows));
  state.SetLabel(std::string(to_string(s.model.spec.encoder)));
}

void BM_ForwardBackward(benchmark::State& state) {
  const auto s = make_setup(static_cast<EncoderKind>(state.range(0)));
  Gradients grads(s.model.params);
  for (auto _ : state) {
    const auto pass = forward_pass(s.model, s.batch);
    std::vector<Matrix> d{Matrix::Ones(pass.logits[0].rows(), 2)};
    grads.zero();
    backward_pass(s.model, pass, d, grads);
    benchmark::DoNotOptimize(grads[0].data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.batch.rows));
  state.SetLabel(std::string(to_string(s.model.spec.encoder)));
}

}  // namespace

BENCHMARK(BM_Parallel)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Reference)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardBackward)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
