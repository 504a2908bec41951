#include <benchmark/benchmark.h>

#include <vector>

#include "picl/cascade.hpp"
#include "picl/evalcost.hpp"
#include "picl/ops.hpp"
#include "picl/rng.hpp"
#include "picl/sampling.hpp"

namespace {

std::vector<double> random_prob_map(int res, uint64_t seed) {
    picl::RngStream rng(seed, 77);
    std::vector<double> p(static_cast<size_t>(res) * res);
    for (double& v : p) v = rng.uniform();
    return p;
}

void BM_EntropyMap(benchmark::State& state) {
    int res = static_cast<int>(state.range(0));
    auto p = random_prob_map(res, 1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(picl::entropy_map(p, res));
    }
}
BENCHMARK(BM_EntropyMap)->Arg(32)->Arg(64)->Arg(128);

void BM_BoundaryWeights(benchmark::State& state) {
    int res = static_cast<int>(state.range(0));
    std::vector<double> mask(static_cast<size_t>(res) * res, 0.0);
    for (int y = res / 4; y < 3 * res / 4; ++y) {
        for (int x = res / 4; x < 3 * res / 4; ++x) mask[static_cast<size_t>(y) * res + x] = 1.0;
    }
    picl::CandidateGrid grid = picl::candidate_grid(res, 8, 8);
    for (auto _ : state) {
        benchmark::DoNotOptimize(picl::boundary_distance_weights(mask, res, grid));
    }
}
BENCHMARK(BM_BoundaryWeights)->Arg(32)->Arg(64);

void BM_GumbelTopK(benchmark::State& state) {
    int res = 64;
    picl::CandidateGrid grid = picl::candidate_grid(res, 8, 8);
    auto p = random_prob_map(res, 2);
    auto w = picl::patch_mean_weights(p, res, grid);
    picl::RngStream rng(3, 0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(picl::gumbel_top_k(w, grid, 8, rng, true));
    }
}
BENCHMARK(BM_GumbelTopK);

void BM_AggregatePatches(benchmark::State& state) {
    int res = static_cast<int>(state.range(0));
    picl::CandidateGrid grid = picl::candidate_grid(res, 8, 4);
    picl::RngStream rng(4, 0);
    std::vector<std::pair<picl::PatchBox, picl::Tensor>> patches;
    for (size_t i = 0; i < grid.boxes.size(); i += 3) {
        patches.emplace_back(grid.boxes[i], picl::Tensor::randn({8, 8}, rng));
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(picl::aggregate_patches(patches, res));
    }
}
BENCHMARK(BM_AggregatePatches)->Arg(32)->Arg(64);

void BM_AttentionScores(benchmark::State& state) {
    int t = static_cast<int>(state.range(0));
    int dh = 16;
    picl::RngStream rng(5, 0);
    picl::Tensor q = picl::Tensor::randn({t, dh}, rng);
    picl::Tensor k = picl::Tensor::randn({t, dh}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(picl::scaled_softmax_nt(q, k, 0.25));
    }
}
BENCHMARK(BM_AttentionScores)->Arg(32)->Arg(128)->Arg(512);

void BM_Conv2d(benchmark::State& state) {
    picl::RngStream rng(6, 0);
    picl::Tensor x = picl::Tensor::randn({8, 32, 32}, rng);
    picl::Tensor w = picl::Tensor::randn({16, 8, 3, 3}, rng);
    picl::Tensor b = picl::Tensor::randn({16}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(picl::conv2d(x, w, b, 1));
    }
}
BENCHMARK(BM_Conv2d);

}  // namespace

BENCHMARK_MAIN();
