// Serial reference kernels against the OpenMP ones. Thread count follows
// OMP_NUM_THREADS; the second range argument of the omp cases overrides it.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mvrisk/core/kernels.hpp"

namespace k = mvrisk::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

template <bool Omp>
void BM_Gemm(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    if (Omp && state.range(1) > 0) k::set_num_threads(static_cast<int>(state.range(1)));
    const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
    std::vector<float> c(n * n);
    for (auto _ : state) {
        if constexpr (Omp)
            k::omp::gemm(false, false, n, n, n, a.data(), b.data(), c.data(), false);
        else
            k::serial::gemm(false, false, n, n, n, a.data(), b.data(), c.data(), false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(2 * n * n * n));
}

k::ConvGeometry conv_geometry(std::size_t size) {
    k::ConvGeometry g;
    g.in_channels = 16;
    g.out_channels = 32;
    g.height = g.width = size;
    g.kernel = 3;
    g.stride = 1;
    g.pad = 1;
    g.groups = 4;
    return g;
}

template <bool Omp>
void BM_ConvForward(benchmark::State& state) {
    const auto g = conv_geometry(static_cast<std::size_t>(state.range(0)));
    if (Omp && state.range(1) > 0) k::set_num_threads(static_cast<int>(state.range(1)));
    const auto in = random_vec(g.in_channels * g.height * g.width, 3);
    const auto w = random_vec(g.out_channels * g.in_per_group() * g.kernel * g.kernel, 4);
    const auto bias = random_vec(g.out_channels, 5);
    std::vector<float> out(g.out_channels * g.out_height() * g.out_width());
    for (auto _ : state) {
        if constexpr (Omp)
            k::omp::conv2d_forward(g, in.data(), w.data(), bias.data(), out.data());
        else
            k::serial::conv2d_forward(g, in.data(), w.data(), bias.data(), out.data());
        benchmark::DoNotOptimize(out.data());
    }
}

template <bool Omp>
void BM_ConvBackward(benchmark::State& state) {
    const auto g = conv_geometry(static_cast<std::size_t>(state.range(0)));
    if (Omp && state.range(1) > 0) k::set_num_threads(static_cast<int>(state.range(1)));
    const auto in = random_vec(g.in_channels * g.height * g.width, 3);
    const auto w = random_vec(g.out_channels * g.in_per_group() * g.kernel * g.kernel, 4);
    const auto gout = random_vec(g.out_channels * g.out_height() * g.out_width(), 6);
    std::vector<float> gin(in.size()), gw(w.size()), gb(g.out_channels);
    for (auto _ : state) {
        if constexpr (Omp) {
            k::omp::conv2d_backward_input(g, gout.data(), w.data(), gin.data());
            k::omp::conv2d_backward_weight(g, gout.data(), in.data(), gw.data(), gb.data());
        } else {
            k::serial::conv2d_backward_input(g, gout.data(), w.data(), gin.data());
            k::serial::conv2d_backward_weight(g, gout.data(), in.data(), gw.data(), gb.data());
        }
        benchmark::DoNotOptimize(gin.data());
        benchmark::DoNotOptimize(gw.data());
    }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Args({64, 0})->Args({256, 0});
BENCHMARK(BM_Gemm<true>)->Args({64, 0})->Args({256, 0});
BENCHMARK(BM_ConvForward<false>)->Args({32, 0})->Args({128, 0});
BENCHMARK(BM_ConvForward<true>)->Args({32, 0})->Args({128, 0});
BENCHMARK(BM_ConvBackward<false>)->Args({32, 0})->Args({128, 0});
BENCHMARK(BM_ConvBackward<true>)->Args({32, 0})->Args({128, 0});

BENCHMARK_MAIN();
