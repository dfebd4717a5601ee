#include "rskt/pipeline.hpp"

#include <benchmark/benchmark.h>

using namespace rskt;

namespace {

void BM_ForwardPass(benchmark::State& state) {
    ModelConfig mc;
    FusionConfig fc;
    fc.num_layers = static_cast<std::size_t>(state.range(0));
    DecoderConfig dc;
    RsktSeg<float> model(mc, fc, dc);

    ClassVocabulary vocab{{"building", "tree", "road"}, mc.templates};
    const auto text = model.embed_text(vocab);
    Rng rng(11);
    TensorT<float> image(Shape{mc.input_size, mc.input_size, 3});
    rng.fill_uniform(image, 0, 1);

    for (auto _ : state) {
        Tape<float> tp;
        Var logits = model.forward(tp, image, text);
        benchmark::DoNotOptimize(tp.value(logits).data());
    }
}

} // namespace

BENCHMARK(BM_ForwardPass)->Arg(1)->Arg(2)->Arg(5)->Unit(benchmark::kMillisecond);
