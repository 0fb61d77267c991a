#include <benchmark/benchmark.h>

#include "apprentice/deploy.hpp"
#include "apprentice/ops.hpp"
#include "apprentice/quant.hpp"
#include "apprentice/rng.hpp"

using namespace apprentice;

namespace {

std::vector<float> rand_floats(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = float(rng.uniform(-1.0, 1.0));
    return v;
}

PackedTensor rand_ternary(std::size_t m, std::size_t k, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::int8_t> codes(m * k);
    for (auto& c : codes) c = std::int8_t(int(rng.uniform_index(3)) - 1);
    return pack_ternary(codes, {m, k}, 0.05);
}

} // namespace

static void BM_DenseMatvec(benchmark::State& state) {
    const std::size_t m = state.range(0), k = state.range(0);
    const auto w = rand_floats(m * k, 1);
    const auto x = rand_floats(k, 2);
    std::vector<float> y(m);
    for (auto _ : state) {
        kernels::gemm(m, k, 1, w.data(), x.data(), y.data(), false);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(int64_t(state.iterations()) * m * k);
}
BENCHMARK(BM_DenseMatvec)->Arg(256)->Arg(1024);

static void BM_TernaryMatvecPacked(benchmark::State& state) {
    const std::size_t m = state.range(0), k = state.range(0);
    const PackedTensor w = rand_ternary(m, k, 3);
    const auto x = rand_floats(k, 4);
    for (auto _ : state) {
        auto y = ternary_matvec(w, x);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(int64_t(state.iterations()) * m * k);
}
BENCHMARK(BM_TernaryMatvecPacked)->Arg(256)->Arg(1024);

static void BM_TernaryQuantize(benchmark::State& state) {
    Tensor<float> w({std::size_t(state.range(0))});
    Rng rng(5);
    for (auto& v : w.data) v = float(rng.uniform(-1.0, 1.0));
    for (auto _ : state) {
        auto t = ternary_quantize(w);
        benchmark::DoNotOptimize(t.codes.data());
    }
    state.SetItemsProcessed(int64_t(state.iterations()) * state.range(0));
}
BENCHMARK(BM_TernaryQuantize)->Arg(1 << 12)->Arg(1 << 16);

static void BM_PackUnpackTernary(benchmark::State& state) {
    Rng rng(6);
    std::vector<std::int8_t> codes(std::size_t(state.range(0)));
    for (auto& c : codes) c = std::int8_t(int(rng.uniform_index(3)) - 1);
    for (auto _ : state) {
        auto p = pack_ternary(codes, {codes.size()}, 1.0);
        auto back = unpack_ternary(p);
        benchmark::DoNotOptimize(back.data());
    }
    state.SetItemsProcessed(int64_t(state.iterations()) * state.range(0));
}
BENCHMARK(BM_PackUnpackTernary)->Arg(1 << 12)->Arg(1 << 16);

static void BM_Conv2dForward(benchmark::State& state) {
    const std::size_t c = 16, hw = 16;
    auto x = make_tensor<float>({8, c, hw, hw});
    auto w = make_tensor<float>({32, c, 3, 3});
    Rng rng(7);
    for (auto& v : x->data) v = float(rng.uniform(-1.0, 1.0));
    for (auto& v : w->data) v = float(rng.uniform(-0.3, 0.3));
    for (auto _ : state) {
        Tape<float> tape;
        auto y = conv2d(tape, x, w, 1, 1);
        benchmark::DoNotOptimize(y->data.data());
    }
}
BENCHMARK(BM_Conv2dForward);

BENCHMARK_MAIN();
