#include <benchmark/benchmark.h>

#include "odpg/diffusion.hpp"
#include "odpg/metrics.hpp"
#include "odpg/ops.hpp"
#include "odpg/threading.hpp"

using namespace odpg;

namespace {

ConditionSet bench_cond(const UNetConfig& cfg, int b, Rng& rng) {
    ConditionSet cond;
    int side = cfg.latent_size;
    for (int l = 0; l < 3; ++l) {
        const int c = cfg.widths[std::size_t(l)];
        cond.f_s.push_back(Tensor::randn({b, c, side, side}, rng));
        cond.f_p.push_back(Tensor::randn({b, c, side, side}, rng));
        cond.f_g.push_back(Tensor::randn({b, c, side, side}, rng));
        side /= 2;
    }
    cond.tokens = Tensor::randn({b, cfg.n_tokens, cfg.token_dim}, rng);
    cond.drop_app.assign(std::size_t(b), 0);
    cond.drop_pose.assign(std::size_t(b), 0);
    cond.drop_garment.assign(std::size_t(b), 0);
    return cond;
}

void BM_Matmul(benchmark::State& state) {
    Rng rng(1);
    const int n = int(state.range(0));
    auto a = Tensor::randn({n, n}, rng);
    auto b = Tensor::randn({n, n}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b).data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * std::int64_t(n) * n * n);
}
BENCHMARK(BM_Matmul)->Arg(128)->Arg(256)->Arg(512);

void BM_Conv2dForward(benchmark::State& state) {
    Rng rng(2);
    auto x = Tensor::randn({8, 128, 16, 16}, rng);
    auto w = Tensor::randn({64, 128, 3, 3}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv2d(x, w, Tensor(), 1, 1).data());
    }
}
BENCHMARK(BM_Conv2dForward);

void BM_Conv2dTrain(benchmark::State& state) {
    Rng rng(3);
    auto x = Tensor::randn({8, 128, 16, 16}, rng);
    auto w = Tensor::randn({64, 128, 3, 3}, rng);
    w.set_requires_grad(true);
    for (auto _ : state) {
        auto y = conv2d(x, w, Tensor(), 1, 1);
        backward(sum_all(y));
        w.zero_grad();
    }
}
BENCHMARK(BM_Conv2dTrain);

void BM_AttentionCore(benchmark::State& state) {
    Rng rng(4);
    auto q = Tensor::randn({8, 256, 64}, rng);
    auto k = Tensor::randn({8, 16, 64}, rng);
    auto v = Tensor::randn({8, 16, 64}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        benchmark::DoNotOptimize(attention_core(q, k, v, 4).data());
    }
}
BENCHMARK(BM_AttentionCore);

void BM_UnetForward(benchmark::State& state) {
    set_num_threads(int(state.range(0)));
    Rng rng(5);
    UNetConfig cfg;
    UNetModel unet(cfg, rng);
    auto cond = bench_cond(cfg, 1, rng);
    auto z = Tensor::randn({1, 4, 16, 16}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        benchmark::DoNotOptimize(unet.forward(z, {500}, cond).data());
    }
    set_num_threads(1);
}
BENCHMARK(BM_UnetForward)->Arg(1)->Arg(2);

void BM_DdimStep(benchmark::State& state) {
    Rng rng(6);
    auto sched = make_schedule(1000, 1e-4, 0.02);
    auto z = Tensor::randn({1, 4, 16, 16}, rng);
    auto eps = Tensor::randn(z.shape(), rng);
    Rng step_rng(7);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ddim_step(z, eps, 500, 250, sched, 0.0, step_rng).data());
    }
}
BENCHMARK(BM_DdimStep);

void BM_Ssim(benchmark::State& state) {
    Rng rng(8);
    auto a = Tensor::uniform({3, 64, 64}, rng, 0, 1);
    auto b = Tensor::uniform({3, 64, 64}, rng, 0, 1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(ssim(a, b));
    }
}
BENCHMARK(BM_Ssim);

}  // namespace

BENCHMARK_MAIN();
