// Microbenchmarks of the temporal encoders and the core kernels they
// sit on. The full scaling study with slope fits lives behind the
// `exchanger bench` subcommand; these are quick developer checks.

#include <benchmark/benchmark.h>

#include <exchanger/bench.hpp>
#include <exchanger/graph.hpp>
#include <exchanger/model.hpp>
#include <exchanger/random.hpp>

using namespace exchanger;

namespace {

ExchangerConfig bench_cfg() {
    ExchangerConfig cfg;
    cfg.width = 64;
    cfg.clusters = 8;
    cfg.heads = 4;
    cfg.stages = 1;
    return cfg;
}

void BM_MatmulSquare(benchmark::State& state) {
    const std::int64_t n = state.range(0);
    Rng rng(1);
    auto a = randn<float>({n, n}, rng, 1.0);
    auto b = randn<float>({n, n}, rng, 1.0);
    for (auto _ : state) {
        Graph g;
        g.set_grad_enabled(false);
        benchmark::DoNotOptimize(g.matmul(a, b)->values[0]);
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_MatmulSquare)->Arg(64)->Arg(128)->Arg(256);

void BM_ExchangerForward(benchmark::State& state) {
    const std::int64_t t_len = state.range(0);
    const auto cfg = bench_cfg();
    auto stages = init_exchanger_params<float>(cfg, 7);
    for (auto& sp : stages) {
        sp.for_each_param("", [](const std::string&, ValuePtr<float>& t) {
            t->requires_grad = false;
        });
    }
    Rng rng(2);
    auto tokens = randn<float>({t_len, cfg.width}, rng, 1.0);
    auto positions = randn<float>({t_len, cfg.width}, rng, 1.0);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(t_len), 1);
    for (auto _ : state) {
        Graph g;
        g.set_grad_enabled(false);
        benchmark::DoNotOptimize(
            exchanger_forward(g, cfg, stages, tokens, positions, mask)->values[0]);
    }
    state.SetItemsProcessed(state.iterations() *
                            static_cast<std::int64_t>(count_flops(cfg, t_len)));
}
BENCHMARK(BM_ExchangerForward)->Arg(64)->Arg(256)->Arg(1024)->Arg(4096);

void BM_SelfAttentionForward(benchmark::State& state) {
    const std::int64_t t_len = state.range(0);
    const auto cfg = bench_cfg();
    auto params = init_self_attention_params<float>(cfg, 7);
    params.for_each_param("", [](const std::string&, ValuePtr<float>& t) {
        t->requires_grad = false;
    });
    Rng rng(3);
    auto tokens = randn<float>({t_len, cfg.width}, rng, 1.0);
    auto positions = randn<float>({t_len, cfg.width}, rng, 1.0);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(t_len), 1);
    for (auto _ : state) {
        Graph g;
        g.set_grad_enabled(false);
        benchmark::DoNotOptimize(
            self_attention_forward(g, cfg, params, tokens, positions, mask)->values[0]);
    }
    state.SetItemsProcessed(
        state.iterations() * static_cast<std::int64_t>(self_attention_count_flops(cfg, t_len)));
}
BENCHMARK(BM_SelfAttentionForward)->Arg(64)->Arg(256)->Arg(1024)->Arg(4096);

void BM_ExchangerBackward(benchmark::State& state) {
    const std::int64_t t_len = state.range(0);
    const auto cfg = bench_cfg();
    auto stages = init_exchanger_params<float>(cfg, 7);
    Rng rng(4);
    auto tokens = randn<float>({t_len, cfg.width}, rng, 1.0);
    auto positions = randn<float>({t_len, cfg.width}, rng, 1.0);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(t_len), 1);
    for (auto _ : state) {
        Graph g;
        auto out = exchanger_forward(g, cfg, stages, tokens, positions, mask);
        auto loss = g.mean_all(g.mul(out, out));
        g.backward(loss);
        benchmark::DoNotOptimize(loss->values[0]);
        for (auto& sp : stages) {
            sp.for_each_param("", [](const std::string&, ValuePtr<float>& t) {
                t->zero_grad();
            });
        }
    }
}
BENCHMARK(BM_ExchangerBackward)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
