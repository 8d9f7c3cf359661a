#include <benchmark/benchmark.h>

#include <random>

#include "bt/nn/ops.hpp"
#include "bt/packing.hpp"
#include "bt/quantizer.hpp"

namespace {

bt::Tensor normal(bt::Shape shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> d;
    bt::Tensor t(std::move(shape));
    for (float& v : t.values()) v = d(rng);
    return t;
}

bt::PackedQuantTensor packed(const bt::Tensor& w, bt::SchemeKind kind) {
    bt::QuantScheme s;
    s.kind = kind;
    return bt::pack(bt::quantize(w, s));
}

// Args: scheme kind, vector length.
void BM_PackedDot(benchmark::State& state) {
    const auto kind = static_cast<bt::SchemeKind>(state.range(0));
    const auto n = static_cast<std::size_t>(state.range(1));
    const auto p = packed(normal({1, n}, 1), kind);
    const auto a = normal({n}, 2);
    for (auto _ : state) benchmark::DoNotOptimize(bt::packed_dot(p, a.values()));
    state.SetItemsProcessed(state.iterations() * state.range(1));
}

void BM_DenseDot(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(1));
    const auto w = normal({n}, 1), a = normal({n}, 2);
    for (auto _ : state) {
        double acc = 0;
        for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(w[i]) * a[i];
        benchmark::DoNotOptimize(acc);
    }
    state.SetItemsProcessed(state.iterations() * state.range(1));
}

// Args: scheme kind (0 = dense float), channels; 14x14 feature map.
void BM_Conv3x3(benchmark::State& state) {
    const auto kind = static_cast<bt::SchemeKind>(state.range(0));
    const auto c = static_cast<std::size_t>(state.range(1));
    const auto w = normal({c, c, 3, 3}, 3);
    const auto x = normal({1, c, 14, 14}, 4);
    if (kind == bt::SchemeKind::Full) {
        for (auto _ : state) benchmark::DoNotOptimize(bt::nn::conv2d(x, w, nullptr, 1, 1));
    } else {
        const auto p = packed(w, kind);
        for (auto _ : state) benchmark::DoNotOptimize(bt::packed_conv2d(p, x, 1, 1));
    }
}

void dot_args(benchmark::internal::Benchmark* b) {
    for (int kind : {1, 2, 3})
        for (int n : {4096, 65536}) b->Args({kind, n});
}

void conv_args(benchmark::internal::Benchmark* b) {
    for (int kind : {0, 1, 2, 3})
        for (int c : {16, 32, 64}) b->Args({kind, c});
}

}  // namespace

BENCHMARK(BM_PackedDot)->Apply(dot_args);
BENCHMARK(BM_DenseDot)->Args({0, 4096})->Args({0, 65536});
BENCHMARK(BM_Conv3x3)->Apply(conv_args);
BENCHMARK_MAIN();
