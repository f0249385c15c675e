// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "siga/model.hpp"
#include "siga/ops.hpp"
#include "siga/rng.hpp"
#include "siga/synth.hpp"
#include "siga/text_seg.hpp"
#include "siga/train.hpp"

namespace {

using namespace siga;

Tensor random_tensor(const Shape& shape, Rng& rng) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from(shape, std::move(v));
}

void BM_Conv3x3(benchmark::State& state) {
  const std::size_t cin = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor x = random_tensor({16, cin, 16, 64}, rng);
  const Tensor w = random_tensor({cin, cin, 3, 3}, rng);
  const Tensor b = random_tensor({cin}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b));
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(256);

void BM_KMeans(benchmark::State& state) {
  data::SynthConfig sc;
  sc.noise_sigma = 0.05;
  const auto samples = data::generate_corpus(3, 64, sc);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(seg::kmeans_mask(samples[i++ % samples.size()].image));
}
BENCHMARK(BM_KMeans);

// One forward, backward and Adam update at batch 16. Args: js, acfm.
void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.switches.enable_js = state.range(0) != 0;
  cfg.switches.enable_acfm = state.range(1) != 0;
  data::SynthConfig sc;
  sc.noise_sigma = 0.05;
  const auto samples = data::generate_corpus(4, 16, sc);
  ModelParams ps = init_model(cfg);
  const auto pseudo = cluster_pseudo_labels(samples, cfg);
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  const Batch batch = make_batch(samples, idx, cfg.switches.enable_js ? &pseudo : nullptr);
  Adam opt(cfg);
  for (auto _ : state) {
    ps.zero_grad();
    ForwardResult fr = total_loss(batch, ps, cfg, RunMode::train());
    backward(fr.total);
    active_tape().clear();
    opt.step(ps);
  }
}
BENCHMARK(BM_TrainStep)
    ->Args({0, 0})
    ->Args({1, 0})
    ->Args({1, 1})
    ->ArgNames({"js", "acfm"})
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
