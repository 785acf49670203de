#include <benchmark/benchmark.h>

#include <vector>

#include "punr/masking.hpp"
#include "punr/metrics.hpp"
#include "punr/model.hpp"
#include "punr/ops.hpp"
#include "punr/rng.hpp"
#include "punr/training.hpp"

namespace punr {
namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  return Tensor::from({rows, cols}, std::move(v));
}

// Behaviors of `len` tokens each behind a CLS, padded to `total`.
TokenizedSequence history(std::size_t behaviors, std::size_t len, std::size_t total,
                          std::size_t vocab) {
  TokenizedSequence s;
  s.tokens.push_back(kCls);
  s.segment_ids.push_back(0);
  for (std::size_t b = 0; b < behaviors; ++b)
    for (std::size_t i = 0; i < len; ++i) {
      s.tokens.push_back(static_cast<int>(4 + (b * len + i) % (vocab - 4)));
      s.segment_ids.push_back(static_cast<int>(b + 1));
    }
  while (s.tokens.size() < total) {
    s.tokens.push_back(kPad);
    s.segment_ids.push_back(0);
  }
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    s.position_ids.push_back(static_cast<int>(i));
    s.attention_keep.push_back(s.tokens[i] != kPad);
  }
  return s;
}

ModelConfig bench_config(std::size_t d) {
  ModelConfig c;
  c.vocab_size = 400;
  c.hidden_dim = d;
  c.n_layers = 2;
  c.n_heads = 4;
  c.ffn_dim = 4 * d;
  c.max_seq_len = 128;
  c.max_segments = 11;
  c.dropout = 0.0;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_EncodeUser(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  PunrModel m = PunrModel::create(bench_config(d), 1);
  TokenizedSequence seq = history(10, 6, 64, 400);
  for (auto _ : state) benchmark::DoNotOptimize(encode_vector(seq, m.user_tower(), m.config()));
}
BENCHMARK(BM_EncodeUser)->Arg(32)->Arg(64);

void BM_PretrainStep(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  PunrModel m = PunrModel::create(bench_config(d), 1);
  TokenizedSequence seq = history(10, 6, 64, 400);
  MaskingConfig mc;
  MaskPlan plan = plan_masks(seq, mc);
  for (auto _ : state) {
    PretrainLosses l = pretrain_losses(seq, plan, m, {}, false);
    backward(l.total);
  }
}
BENCHMARK(BM_PretrainStep)->Arg(32)->Arg(64);

void BM_PlanMasks(benchmark::State& state) {
  TokenizedSequence seq = history(50, 6, 301, 400);
  MaskingConfig mc;
  std::uint64_t i = 0;
  for (auto _ : state) {
    mc.seed = ++i;
    benchmark::DoNotOptimize(plan_masks(seq, mc));
  }
}
BENCHMARK(BM_PlanMasks);

void BM_AggregateMetrics(benchmark::State& state) {
  Rng rng(2);
  std::vector<ImpressionScores> imps(1000);
  for (auto& imp : imps) {
    const std::size_t n = 2 + rng.below(19);
    for (std::size_t i = 0; i < n; ++i) {
      imp.scores.push_back(rng.normal(0.0, 1.0));
      imp.labels.push_back(i == 0 || rng.bernoulli(0.2) ? 1 : 0);
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(aggregate_metrics(imps));
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_AggregateMetrics);

}  // namespace
}  // namespace punr

BENCHMARK_MAIN();
