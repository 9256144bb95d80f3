#include <benchmark/benchmark.h>

#include "support.hpp"

using namespace dcmg;

static void BM_SolveLocal(benchmark::State& state) {
    const auto aug = augmented_dgu(test::table1_grid(), DguId{1});
    SynthesisOptions opts;
    opts.target_bandwidth_hz = static_cast<double>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(solve_problem_O(aug, opts));
}
BENCHMARK(BM_SolveLocal)->Arg(0)->Arg(100)->Unit(benchmark::kMillisecond);

static void BM_GlobalCertificate(benchmark::State& state) {
    const auto g = test::load_grid("scenario2/grid.ini");
    const auto gains = test::synthesize_all(g);
    for (auto _ : state) benchmark::DoNotOptimize(certify_global_stability(g, gains));
}
BENCHMARK(BM_GlobalCertificate)->Unit(benchmark::kMicrosecond);

static void BM_RankGamma(benchmark::State& state) {
    test::RandomGrids rnd(1);
    const auto m = assemble_qsl_overall(rnd.grid(static_cast<int>(state.range(0)), static_cast<int>(state.range(0))));
    for (auto _ : state) benchmark::DoNotOptimize(check_rank_gamma(m));
}
BENCHMARK(BM_RankGamma)->Arg(2)->Arg(8)->Arg(32);

static void BM_PlugCheck(benchmark::State& state) {
    const auto g = test::load_grid("scenario2/grid.ini");
    const auto gains = test::synthesize_all(g);
    const auto req = test::load_request("scenario2/plug_dgu6.ini");
    for (auto _ : state) benchmark::DoNotOptimize(evaluate(g, gains, req, {}));
}
BENCHMARK(BM_PlugCheck)->Unit(benchmark::kMillisecond);

static void BM_SimulateScenario1(benchmark::State& state) {
    const auto g = test::load_grid("scenario1/grid.ini");
    GridGraph iso = g;
    iso.remove_line(DguId{1}, DguId{2});
    const auto gains = test::synthesize_all(iso);
    const auto sc = test::load_scenario("scenario1/scenario.ini");
    SimConfig cfg;
    cfg.stack.prefilter_bw_hz = 100.0;
    cfg.stack.compensator = true;
    for (auto _ : state) benchmark::DoNotOptimize(simulate(g, gains, sc, cfg));
}
BENCHMARK(BM_SimulateScenario1)->Unit(benchmark::kMillisecond)->Iterations(3);

BENCHMARK_MAIN();
