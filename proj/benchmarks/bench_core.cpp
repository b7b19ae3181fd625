#include <benchmark/benchmark.h>

#include "chartlab/chartgen/chart_spec.hpp"
#include "chartlab/chartgen/raster.hpp"
#include "chartlab/config/run_config.hpp"
#include "chartlab/dualenc/encoder.hpp"
#include "chartlab/numerics/tape.hpp"
#include "chartlab/trainer/trainer.hpp"
#include "chartlab/util/rng.hpp"

using namespace chartlab;
using num::Tensor;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) {
    num::Tape t;
    const auto loss = t.scale(t.matmul(t.param("a", a), t.param("b", b)), 1.0);
    auto grads = t.backward(t.cross_entropy_rows(loss, std::vector<std::size_t>(n, 0)));
    benchmark::DoNotOptimize(grads);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(32)->Arg(64)->Arg(128);

void BM_RenderChart(benchmark::State& state) {
  const auto cfg = config::preset("full").generator;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const auto spec = chartgen::sample_chart_spec(++seed, cfg);
    benchmark::DoNotOptimize(chartgen::render_chart(spec, cfg.resolution));
  }
}
BENCHMARK(BM_RenderChart);

struct EncoderFixture {
  config::RunConfig cfg = config::preset("full");
  num::ParamSet params = dualenc::init_params(cfg.encoder, 1);
  std::vector<chartgen::RasterImage> images;
  std::vector<std::string> captions;

  explicit EncoderFixture(std::size_t batch) {
    for (std::size_t i = 0; i < batch; ++i) {
      images.push_back(chartgen::render_chart(chartgen::sample_chart_spec(i + 1, cfg.generator), cfg.generator.resolution));
      captions.push_back("The value of Revenue in 2004 was 24.5.");
    }
  }
};

void BM_EncoderForward(benchmark::State& state) {
  EncoderFixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(dualenc::encode_image(f.images, f.params, f.cfg.encoder));
    benchmark::DoNotOptimize(dualenc::encode_text(f.captions, f.params, f.cfg.encoder));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForward)->Arg(16)->Arg(64);

void BM_TrainingStepLoss(benchmark::State& state) {
  EncoderFixture f(static_cast<std::size_t>(state.range(0)));
  const dualenc::Tokenizer tok(f.cfg.encoder);
  std::vector<const chartgen::RasterImage*> ptrs;
  std::vector<dualenc::TokenIds> ids;
  for (std::size_t i = 0; i < f.images.size(); ++i) {
    ptrs.push_back(&f.images[i]);
    ids.push_back(tok.encode(f.captions[i]));
  }
  for (auto _ : state) {
    num::Tape t;
    const auto img = dualenc::image_embeddings(t, f.params, f.cfg.encoder, ptrs);
    const auto txt = dualenc::text_embeddings(t, f.params, f.cfg.encoder, ids);
    auto grads = t.backward(trainer::hardneg_infonce(t, img, txt, num::Var{}, t.param(f.params, "logit_scale")));
    benchmark::DoNotOptimize(grads);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainingStepLoss)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
