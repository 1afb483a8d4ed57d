// SPDX-License-Identifier: Apache-2.0
//
// Microbenchmarks for the hot paths: autodiff kernels, backbone forward and
// backward, adapter training steps and decoding.
#include <benchmark/benchmark.h>

#include "dct/adapter.hpp"
#include "dct/decode.hpp"
#include "dct/lm.hpp"
#include "dct/lm_corpus.hpp"
#include "dct/sampling.hpp"
#include "dct/trainer.hpp"

namespace {

using namespace dct;

Array2 noise(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Array2 out(r, c);
  for (double& v : out.data()) v = rng.normal();
  return out;
}

const Vocabulary& vocab() {
  static const Vocabulary v = Vocabulary::build(vocabulary_text());
  return v;
}

// Desk-scale backbone shape, random weights.
const LanguageModel& backbone() {
  static const LanguageModel lm = [] {
    LMConfig c;
    c.layers = 4;
    c.heads = 4;
    c.d_model = 64;
    c.d_ff = 256;
    c.vocab_size = vocab().size();
    Rng rng(1);
    LanguageModel m(c, rng);
    m.freeze();
    return m;
  }();
  return lm;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const ad::Var a(noise(n, n, 1)), b(noise(n, n, 2));
  for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(a, b).value().data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_AttentionForwardBackward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const Array2 q = noise(t, 64, 1), k = noise(t, 64, 2), v = noise(t, 64, 3);
  for (auto _ : state) {
    ad::Var qv(q, true), kv(k, true), vv(v, true);
    ad::backward(ad::sum(ad::causal_self_attention(qv, kv, vv, 4)));
    benchmark::DoNotOptimize(qv.grad().data().data());
  }
}
BENCHMARK(BM_AttentionForwardBackward)->Arg(32)->Arg(128);

void BM_BackboneForward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  std::vector<TokenId> ids(t);
  for (std::size_t i = 0; i < t; ++i) ids[i] = static_cast<TokenId>(7 + i % 100);
  for (auto _ : state) {
    ContextAssembly a;
    a.tokens(ids);
    benchmark::DoNotOptimize(backbone().forward(a).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BackboneForward)->Arg(32)->Arg(96);

void BM_AdapterStep(benchmark::State& state) {
  std::vector<TrainExample> train;
  for (std::uint64_t i = 0; i < 8; ++i) {
    TrainExample ex;
    ex.scene_id = "s" + std::to_string(i);
    ex.audio = noise(120, 32, 10 + i);
    for (int j = 0; j < 12; ++j) ex.target.push_back(static_cast<TokenId>(20 + j));
    ex.target.push_back(special::kEos);
    train.push_back(std::move(ex));
  }
  TrainConfig c;
  c.mode = state.range(0) == 0 ? TrainMode::kCaption : TrainMode::kDct;
  c.peak_lr = 1e-3;
  c.warmup_iters = 10;
  Trainer trainer(c, backbone(), vocab(), train, {});
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step());
  state.SetLabel(to_string(c.mode));
}
BENCHMARK(BM_AdapterStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Decode(benchmark::State& state) {
  const auto beam = static_cast<std::size_t>(state.range(0));
  const Array2 ctx = backbone().token_embeddings(std::vector<TokenId>{1, 3, 20, 21, 22, 6});
  for (auto _ : state) {
    if (beam == 1) {
      benchmark::DoNotOptimize(generate_greedy(backbone(), ctx, 40).size());
    } else {
      benchmark::DoNotOptimize(generate_beam(backbone(), ctx, beam, 40).tokens.size());
    }
  }
}
BENCHMARK(BM_Decode)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_Sample(benchmark::State& state) {
  const Array2 ctx = backbone().token_embeddings(std::vector<TokenId>{1, 3, 20, 21, 22, 6});
  Rng rng(5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_sample(backbone(), ctx, 0.7, 40, rng).size());
  }
}
BENCHMARK(BM_Sample)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
