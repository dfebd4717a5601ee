#include "rskt/fusion.hpp"

#include <benchmark/benchmark.h>

using namespace rskt;

namespace {

// One SET pass at a given spatial reduction ratio. The r1 sweep makes the
// key/value shrinkage visible as wall time, next to the analytic 1/r^2
// score-term count for the cross-attention reading.
void BM_SetLayer(benchmark::State& state) {
    const std::size_t r1 = static_cast<std::size_t>(state.range(0));
    const std::size_t hf = 16, n = 8, cf = 64;
    FusionConfig cfg;
    cfg.num_layers = 1;
    cfg.r1 = r1;
    cfg.r2 = 2;

    ParamStore<float> store;
    register_fusion_params(store, "fusion.", cfg, cf, hf, hf, 1);

    Rng rng(3);
    TensorT<float> cost(Shape{hf, hf, n, cf});
    rng.fill_uniform(cost, -1, 1);
    TensorT<float> clip_mid(Shape{hf, hf, cf});
    rng.fill_uniform(clip_mid, -1, 1);
    TensorT<float> dino_mid(Shape{hf, hf, cf});
    rng.fill_uniform(dino_mid, -1, 1);
    TensorT<float> text(Shape{n, cf});
    rng.fill_uniform(text, -1, 1);

    for (auto _ : state) {
        Tape<float> tp;
        GuidanceVars<float> g{tp.constant(clip_mid), tp.constant(dino_mid)};
        Var out = aggregate_vars(tp, store, "fusion.", tp.constant(cost), g, tp.constant(text), cfg);
        benchmark::DoNotOptimize(tp.value(out).data());
    }
    state.counters["score_terms"] = static_cast<double>(
        attention_flops(hf * hf, (hf / r1) * (hf / r1), cfg.d_c));
}

void BM_AttentionSelf(benchmark::State& state) {
    const std::size_t l = static_cast<std::size_t>(state.range(0));
    const std::size_t d = 128, heads = 4;
    Rng rng(5);
    TensorT<float> x(Shape{1, l, d});
    rng.fill_uniform(x, -1, 1);
    ParamStore<float> store;
    Rng init(7);
    for (const char* n : {"q", "k", "v", "o"}) {
        store.add(std::string("a.") + n + ".w", fan_in_init<float>(init, d, d));
        store.add(std::string("a.") + n + ".b", TensorT<float>(Shape{d}));
    }
    for (auto _ : state) {
        Tape<float> tp;
        MhaVars<float> m{tp.param("a.q.w", store.value("a.q.w")), tp.param("a.q.b", store.value("a.q.b")),
                         tp.param("a.k.w", store.value("a.k.w")), tp.param("a.k.b", store.value("a.k.b")),
                         tp.param("a.v.w", store.value("a.v.w")), tp.param("a.v.b", store.value("a.v.b")),
                         tp.param("a.o.w", store.value("a.o.w")), tp.param("a.o.b", store.value("a.o.b"))};
        Var out = multi_head_self_attention(tp, tp.constant(x), m, heads);
        benchmark::DoNotOptimize(tp.value(out).data());
    }
    state.counters["score_terms"] = static_cast<double>(attention_flops(l, l, d));
}

} // namespace

BENCHMARK(BM_SetLayer)->Arg(1)->Arg(2)->Arg(4);
BENCHMARK(BM_AttentionSelf)->Arg(64)->Arg(256)->Arg(1024);
