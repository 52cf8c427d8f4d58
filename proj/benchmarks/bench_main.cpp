#include <benchmark/benchmark.h>

#include <random>

#include "dsam/harness.hpp"
#include "dsam/kernels.hpp"

using namespace dsam;

namespace {

Tensor random_tensor(Tensor::Shape shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor t(std::move(shape));
    for (double& v : t.storage()) v = u(rng);
    return t;
}

void BM_Conv3x3(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    const Tensor x = random_tensor({c, 16, 16}, 1);
    const Tensor w = random_tensor({c, c, 3, 3}, 2);
    const Tensor b(Tensor::Shape{c}, 0.0);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::conv2d(x, w, b, {1, 1, 1}));
}
BENCHMARK(BM_Conv3x3)->Arg(32)->Arg(64);

void BM_MetricSuite(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Tensor pred = random_tensor({1, n, n}, 3);
    Tensor p = pred, gt(Tensor::Shape{1, n, n});
    for (std::size_t i = 0; i < p.numel(); ++i) {
        p[i] = 0.5 * (p[i] + 1.0);
        gt[i] = p[i] > 0.6 ? 1.0 : 0.0;
    }
    for (auto _ : state) benchmark::DoNotOptimize(metrics::evaluate_sample(p, gt));
}
BENCHMARK(BM_MetricSuite)->Arg(64)->Arg(256);

void BM_ForwardDesk(benchmark::State& state) {
    harness::RunConfig cfg;
    const auto data = harness::resolve_test_set(cfg);
    harness::DsamModel model(cfg);
    const auto inputs = model.precompute(data[0]);
    for (auto _ : state) benchmark::DoNotOptimize(model.forward(data[0], inputs).pred_final.logits.value());
}
BENCHMARK(BM_ForwardDesk)->Unit(benchmark::kMillisecond);

void BM_TrainStepDesk(benchmark::State& state) {
    harness::RunConfig cfg;
    cfg.epochs = 1;
    const auto data = harness::resolve_train_set(cfg);
    for (auto _ : state) benchmark::DoNotOptimize(harness::train(cfg, data));
}
BENCHMARK(BM_TrainStepDesk)->Unit(benchmark::kMillisecond)->Iterations(3);

}  // namespace

BENCHMARK_MAIN();
