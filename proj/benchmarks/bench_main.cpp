// Microbenchmarks for the hot paths: subspace estimation, projector
// application, quantization. Run with --benchmark_min_time=... as usual.

#include <random>

#include <benchmark/benchmark.h>

#include "bulkspace/numerics.hpp"
#include "bulkspace/problems.hpp"
#include "bulkspace/quant.hpp"
#include "bulkspace/subspace.hpp"

namespace {

using namespace bulkspace;

Vec random_vec(size_t n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec v(n);
    for (double& x : v) x = gauss(rng);
    return v;
}

UpdateHistory filled_history(size_t p, size_t l, bool quantized, uint64_t seed) {
    UpdateHistory hist(BlockPartition::single(p), l, quantized);
    for (size_t i = 0; i < l; ++i) hist.push(random_vec(p, seed + i));
    return hist;
}

void BM_ThinSvd(benchmark::State& state) {
    const size_t rows = static_cast<size_t>(state.range(0));
    const size_t cols = 30;
    DenseMatrix m(rows, cols);
    std::mt19937_64 rng(7);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double& x : m.data()) x = gauss(rng);
    for (auto _ : state) {
        SvdResult r = thin_svd(m, 10);
        benchmark::DoNotOptimize(r.singular_values.data());
    }
}
BENCHMARK(BM_ThinSvd)->Arg(512)->Arg(4096);

void BM_PpeRefresh(benchmark::State& state) {
    const size_t p = static_cast<size_t>(state.range(0));
    UpdateHistory hist = filled_history(p, 30, false, 11);
    for (auto _ : state) {
        auto u = ppe_estimate(hist, 0, 10);
        benchmark::DoNotOptimize(u->data().data());
    }
}
BENCHMARK(BM_PpeRefresh)->Arg(512)->Arg(4096);

void BM_LpeRefresh(benchmark::State& state) {
    const size_t p = static_cast<size_t>(state.range(0));
    Vec lambdas(p);
    for (size_t i = 0; i < p; ++i) lambdas[i] = 10.0 * std::pow(0.97, static_cast<double>(i));
    const QuadraticProblem quad(lambdas);
    const QuadraticOracle oracle(quad);
    const Vec theta = random_vec(p, 13);
    for (auto _ : state) {
        LpeResult r = lpe_estimate(oracle, theta, 10, 30, 17);
        benchmark::DoNotOptimize(r.eigenvalues.data());
    }
}
BENCHMARK(BM_LpeRefresh)->Arg(512)->Arg(2048);

void BM_ApplyProjector(benchmark::State& state) {
    const size_t p = static_cast<size_t>(state.range(0));
    const size_t k = 30;
    DenseMatrix m(p, k);
    std::mt19937_64 rng(19);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double& x : m.data()) x = gauss(rng);
    const SvdResult svd = thin_svd(m, k);
    Projector pr = Projector::identity(BlockPartition::single(p), 0.5, 2.0);
    pr.bases[0] = svd.left_vectors;
    const Vec v = random_vec(p, 23);
    for (auto _ : state) {
        Vec out = apply_projector(pr, v);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_ApplyProjector)->Arg(4096)->Arg(65536);

void BM_Quantize4(benchmark::State& state) {
    const Vec v = random_vec(static_cast<size_t>(state.range(0)), 29);
    for (auto _ : state) {
        QuantBlock q = quantize4(v, 64);
        benchmark::DoNotOptimize(q.packed.data());
    }
}
BENCHMARK(BM_Quantize4)->Arg(4096)->Arg(65536);

void BM_Dequantize4(benchmark::State& state) {
    const Vec v = random_vec(static_cast<size_t>(state.range(0)), 31);
    const QuantBlock q = quantize4(v, 64);
    for (auto _ : state) {
        Vec out = dequantize4(q);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_Dequantize4)->Arg(4096)->Arg(65536);

void BM_QuantizedHistoryPush(benchmark::State& state) {
    const size_t p = static_cast<size_t>(state.range(0));
    const Vec v = random_vec(p, 37);
    UpdateHistory hist(BlockPartition::single(p), 30, true);
    for (auto _ : state) {
        hist.push(v);
        benchmark::DoNotOptimize(hist.filled());
    }
}
BENCHMARK(BM_QuantizedHistoryPush)->Arg(4096);

} // namespace

BENCHMARK_MAIN();
