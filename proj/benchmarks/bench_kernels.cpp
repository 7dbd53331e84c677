#include "coneflow/background.hpp"
#include "coneflow/flow.hpp"
#include "coneflow/grid.hpp"

#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>

using namespace coneflow;

namespace {

constexpr double kPi = std::numbers::pi;
const grid::DivisorPoint kPoint{kPi / 2, 0.0};

grid::SurfaceHandle surface(benchmark::State& state) {
    const auto kind = state.range(1) == 0 ? grid::SurfaceKind::Torus : grid::SurfaceKind::SphereP1;
    return grid::ModelSurface::build(kind, int(state.range(0)), kind == grid::SurfaceKind::Torus ? 1.0 : 2.0);
}

void BM_DdcDensity(benchmark::State& state) {
    const auto s = surface(state);
    const auto u = grid::sample(*s, [](double a, double b) { return std::cos(a) * std::sin(2 * b); });
    for (auto _ : state) benchmark::DoNotOptimize(grid::ddc_density(*s, u));
    state.SetItemsProcessed(state.iterations() * std::int64_t(s->size()));
}
BENCHMARK(BM_DdcDensity)->ArgsProduct({{32, 64, 128}, {0, 1}});

void BM_ChiEvaluation(benchmark::State& state) {
    const auto s = grid::ModelSurface::build(grid::SurfaceKind::SphereP1, int(state.range(0)), 2.0);
    const auto div = grid::divisor_section(*s, std::span(&kPoint, 1));
    for (auto _ : state) benchmark::DoNotOptimize(background::cgp_chi(0.5, 0.05, div.s_h_sq));
    state.SetItemsProcessed(state.iterations() * std::int64_t(s->size()));
}
BENCHMARK(BM_ChiEvaluation)->Arg(32)->Arg(64)->Arg(128);

void BM_NewtonStep(benchmark::State& state) {
    const auto s = grid::ModelSurface::build(grid::SurfaceKind::SphereP1, int(state.range(0)), 2.0);
    background::FlowParams fp;
    fp.gamma = 0.5;
    fp.epsilon = 0.1;
    fp.k = 0.25;
    fp.T = 0.6;
    const auto pack = background::build_pack(s, grid::divisor_section(*s, std::span(&kPoint, 1)), fp);
    const auto phi = grid::sample(*s, [](double a, double) { return 0.02 * std::cos(a); });
    const auto start = flow::make_state(pack, 0.0, phi);
    for (auto _ : state) benchmark::DoNotOptimize(flow::step(pack, start, {}, 1e-3));
}
BENCHMARK(BM_NewtonStep)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
