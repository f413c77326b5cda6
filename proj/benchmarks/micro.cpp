#include <benchmark/benchmark.h>

#include "neurovit/groundtruth.hpp"
#include "neurovit/metrics.hpp"
#include "neurovit/ops.hpp"
#include "neurovit/train.hpp"
#include "neurovit/vit.hpp"

using namespace neurovit;

namespace {

Tensor random_tensor(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

VitConfig bench_model(ModelKind kind) {
  VitConfig c;
  c.kind = kind;
  c.img_h = c.img_w = 16;
  c.patch = 4;
  c.depth = 5;
  c.embed_dim = 32;
  c.layers = 2;
  c.heads = 4;
  c.mlp_ratio = 4;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  const auto a = random_tensor(rng, {n, n});
  const auto b = random_tensor(rng, {n, n});
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_Forward(benchmark::State& state) {
  const auto cfg = bench_model(state.range(0) == 2 ? ModelKind::TwoD : ModelKind::ThreeD);
  Rng rng(2);
  const auto params = init_params(cfg, rng);
  const auto d = cfg.block_dims();
  const auto input = random_tensor(rng, {1, d.d, d.h, d.w});
  for (auto _ : state) benchmark::DoNotOptimize(forward<float>(params, cfg, input.data()));
}
BENCHMARK(BM_Forward)->Arg(2)->Arg(3);

void BM_ForwardBackward(benchmark::State& state) {
  const auto cfg = bench_model(state.range(0) == 2 ? ModelKind::TwoD : ModelKind::ThreeD);
  Rng rng(3);
  const auto params = init_params(cfg, rng);
  const auto d = cfg.block_dims();
  const auto input = random_tensor(rng, {1, d.d, d.h, d.w});
  const auto dlogits = random_tensor(rng, {d.d, d.h, d.w});
  auto grads = params.zeros_like();
  for (auto _ : state) {
    ForwardTrace<float> trace;
    forward_train<float>(params, cfg, input.data(), trace);
    backward<float>(params, cfg, trace, dlogits, grads);
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(2)->Arg(3);

void BM_RasterizeLabels(benchmark::State& state) {
  SynthParams p;
  p.dims = {64, 64, 15};
  const auto tree = generate_random_tree(p, 0);
  for (auto _ : state) benchmark::DoNotOptimize(rasterize_labels(tree, p.dims, LabelMode::Binary));
}
BENCHMARK(BM_RasterizeLabels);

void BM_Hd95(benchmark::State& state) {
  SynthParams p;
  p.dims = {64, 64, 15};
  const auto a = BinaryMask::from_volume(rasterize_labels(generate_random_tree(p, 0), p.dims, LabelMode::Binary));
  const auto b = BinaryMask::from_volume(rasterize_labels(generate_random_tree(p, 1), p.dims, LabelMode::Binary));
  for (auto _ : state) benchmark::DoNotOptimize(hd95(a, b));
}
BENCHMARK(BM_Hd95);

}  // namespace

BENCHMARK_MAIN();
