#include <benchmark/benchmark.h>

#include "flmg/analysis.hpp"
#include "flmg/diffusion.hpp"
#include "flmg/guidance.hpp"
#include "flmg/nn.hpp"
#include "flmg/rng.hpp"

namespace {

using namespace flmg;

Tensor random_batch(std::size_t n, std::size_t d, std::uint64_t seed) {
  Tensor x = Tensor::matrix(n, d);
  Rng rng(seed);
  rng.fill_normal(x.data());
  return x;
}

void BM_classifier_forward(benchmark::State& state) {
  nn::ClassifierModel model(nn::mlp_arch(144, {64}, 4), std::uint64_t{1});
  const Tensor x = random_batch(32, 144, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward(x, nn::Mode::Eval));
  }
}
BENCHMARK(BM_classifier_forward);

void BM_classifier_train_step(benchmark::State& state) {
  nn::ClassifierModel model(nn::mlp_arch(144, {64}, 4), std::uint64_t{1});
  const Tensor x = random_batch(32, 144, 2);
  std::vector<int> y(32);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 4);
  nn::SgdOptimizer opt(0.05, 0.9);
  for (auto _ : state) {
    nn::ForwardCache cache;
    const Tensor logits = model.forward(x, nn::Mode::Train, &cache);
    const auto ce = nn::cross_entropy(logits, y);
    const auto grads = model.backward(cache, ce.d_logits);
    opt.step(model, grads.params);
  }
}
BENCHMARK(BM_classifier_train_step);

void BM_epsnet_forward(benchmark::State& state) {
  diffusion::EpsNetConfig cfg;
  cfg.data_dim = 144;
  cfg.num_classes = 4;
  diffusion::EpsNet net(cfg, 1);
  const Tensor s = random_batch(32, 144, 3);
  std::vector<int> t(32, 17);
  std::vector<int> y(32, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(net.forward(s, t, y));
  }
}
BENCHMARK(BM_epsnet_forward);

void BM_guided_eps(benchmark::State& state) {
  diffusion::EpsNetConfig cfg;
  cfg.data_dim = 144;
  cfg.num_classes = 4;
  diffusion::EpsNet net(cfg, 1);
  nn::ClassifierModel model(nn::mlp_arch(144, {64}, 4), std::uint64_t{2});
  const auto sched = diffusion::make_schedule(100, 1e-4, 0.02);
  const Tensor s = random_batch(32, 144, 4);
  std::vector<int> y(32, 1);
  guidance::GuidanceConfig gcfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(guidance::guided_eps(s, 50, y, net, model, sched, gcfg));
  }
}
BENCHMARK(BM_guided_eps);

void BM_rbf_mmd2(benchmark::State& state) {
  const Tensor a = random_batch(100, 144, 5);
  const Tensor b = random_batch(100, 144, 6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(analysis::rbf_mmd2(a, b));
  }
}
BENCHMARK(BM_rbf_mmd2);

}  // namespace

BENCHMARK_MAIN();
