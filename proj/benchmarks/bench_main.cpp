#include <benchmark/benchmark.h>

#include "psim/metric.hpp"
#include "psim/random.hpp"
#include "psim/retrieval.hpp"
#include "psim/training.hpp"
#include "psim/triplets.hpp"

using namespace psim;

namespace {

Image noise_image(Rng& rng, int size) {
  Image img(size, size);
  for (float& v : img.data()) v = static_cast<float>(rng.uniform());
  return img;
}

void BM_ForwardCls(benchmark::State& state) {
  const ViTWeights w = init_weights(ViTConfig{}, 1);
  Rng rng(2);
  const Image img = noise_image(rng, 64);
  for (auto _ : state) benchmark::DoNotOptimize(forward_cls(w, img));
}
BENCHMARK(BM_ForwardCls);

void BM_TripletLossBackward(benchmark::State& state) {
  MetricModel m = make_model(ViTConfig{}, 1, 1);
  attach_lora_all(m, LoraConfig{}, 2);
  Rng rng(3);
  const std::array<Image, 3> imgs{noise_image(rng, 64), noise_image(rng, 64), noise_image(rng, 64)};
  const std::array<std::span<const float>, 3> px{imgs[0].data(), imgs[1].data(), imgs[2].data()};
  auto grads = ModelGradT<float>::zeros_like(m);
  for (auto _ : state) benchmark::DoNotOptimize(triplet_loss<float>(m, px, 1, 0.5f, {}, &grads));
}
BENCHMARK(BM_TripletLossBackward);

EmbeddingIndex random_index(std::size_t n, int dim) {
  Rng rng(4);
  Mat<float> e(static_cast<Eigen::Index>(n), dim);
  for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = static_cast<float>(rng.normal());
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("item" + std::to_string(i));
  return EmbeddingIndex(ids, e, "bench", "");
}

void BM_QueryBlocked(benchmark::State& state) {
  const EmbeddingIndex idx = random_index(static_cast<std::size_t>(state.range(0)), 64);
  const Vec<float> q = idx.matrix().row(7).transpose();
  for (auto _ : state) benchmark::DoNotOptimize(query_topk(idx, q, 10));
}
BENCHMARK(BM_QueryBlocked)->Arg(1000)->Arg(10000);

void BM_QueryExhaustive(benchmark::State& state) {
  const EmbeddingIndex idx = random_index(static_cast<std::size_t>(state.range(0)), 64);
  const Vec<float> q = idx.matrix().row(7).transpose();
  for (auto _ : state) benchmark::DoNotOptimize(query_topk_exhaustive(idx, q, 10));
}
BENCHMARK(BM_QueryExhaustive)->Arg(1000)->Arg(10000);

void BM_SynthesizeTriplet(benchmark::State& state) {
  const SamplerConfig sc;
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(synthesize_one(sc, 64, 1, i++));
}
BENCHMARK(BM_SynthesizeTriplet);

}  // namespace

BENCHMARK_MAIN();
