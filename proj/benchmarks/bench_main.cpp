// pstf is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#include <benchmark/benchmark.h>

#include "pstf/estimators.h"
#include "pstf/field.h"
#include "pstf/mappings.h"
#include "pstf/models.h"
#include "pstf/rng.h"

using namespace pstf;

static void BM_SphereSquareRoundTrip(benchmark::State &state) {
    Rng rng(7, 0);
    Vec3 d = sampleUniformSphere(rng.next2D());
    for (auto _ : state) {
        Vec2 uv = sphereToSquare(d);
        d = squareToSphere(uv);
        benchmark::DoNotOptimize(d);
    }
}
BENCHMARK(BM_SphereSquareRoundTrip);

static void BM_FieldAccumulate(benchmark::State &state) {
    FieldStoreConfig config;
    config.capacityLog2 = 16;
    config.baseCellSize = 0.01;
    FieldStore store(config);
    Rng rng(11, 0);
    std::vector<SpatioDirectionalKey> keys;
    for (int i = 0; i < 1024; ++i) {
        Vec3 p(rng.next1D(), rng.next1D(), rng.next1D());
        Vec3 d = sampleUniformSphere(rng.next2D());
        keys.push_back(store.keyFor(p, d, 0));
    }
    size_t i = 0;
    for (auto _ : state) {
        store.accumulate(keys[i & 1023], RGB(1.0), 1.0);
        ++i;
    }
}
BENCHMARK(BM_FieldAccumulate);

static void BM_FieldQuery(benchmark::State &state) {
    FieldStoreConfig config;
    config.capacityLog2 = 16;
    config.baseCellSize = 0.01;
    FieldStore store(config);
    Rng rng(13, 0);
    for (int i = 0; i < 1024; ++i) {
        Vec3 p(rng.next1D(), rng.next1D(), rng.next1D());
        Vec3 d = sampleUniformSphere(rng.next2D());
        auto key = store.keyFor(p, d, 0);
        store.incrementCounter(key, 1.0);
        store.accumulate(key, RGB(0.5), 1.0);
    }
    store.endFrame();
    size_t i = 0;
    for (auto _ : state) {
        Vec3 p(double(i & 255) / 255.0, 0.5, 0.5);
        benchmark::DoNotOptimize(store.query(p, Vec3(0, 0, 1), 0.001));
        ++i;
    }
}
BENCHMARK(BM_FieldQuery);

static void BM_KdTreeSample(benchmark::State &state) {
    SphericalKdTree tree(64);
    Rng rng(17, 0);
    for (int i = 0; i < 4096; ++i)
        tree.record(rng.next2D(), rng.next1D());
    tree.endFrame(0.5, 4.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(tree.sample(rng.next2D()));
    }
}
BENCHMARK(BM_KdTreeSample);

static void BM_GmmEstepSequential(benchmark::State &state) {
    Gmm gmm;
    Rng rng(19, 0);
    for (auto _ : state) {
        gmm.estepSequential(rng.next2D(), rng.next1D());
    }
}
BENCHMARK(BM_GmmEstepSequential);

static void BM_GmmEstepBatch(benchmark::State &state) {
    Rng rng(23, 0);
    std::vector<std::pair<Vec2, double>> samples;
    for (int i = 0; i < int(state.range(0)); ++i)
        samples.emplace_back(rng.next2D(), rng.next1D());
    for (auto _ : state) {
        Gmm gmm;
        gmm.estepBatch(samples);
        benchmark::DoNotOptimize(gmm);
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_GmmEstepBatch)->RangeMultiplier(4)->Range(16, 1024)->Complexity();

BENCHMARK_MAIN();
