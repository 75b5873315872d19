#include <benchmark/benchmark.h>

#include <dfnet/infer.hpp>
#include <dfnet/model.hpp>

using namespace dfnet;

namespace {

Tensor<float> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<float> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = static_cast<float>(rng.uniform(lo, hi));
  return Tensor<float>(std::move(shape), std::move(data));
}

void BM_matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  auto a = random_tensor({n, n}, rng);
  auto b = random_tensor({n, n}, rng);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(256);

void BM_conv2d_forward(benchmark::State& state) {
  Rng rng(2);
  auto x = random_tensor({64, 64, 16}, rng);
  auto k = random_tensor({3, 3, 16, 32}, rng);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, 1, 1));
}
BENCHMARK(BM_conv2d_forward);

void BM_conv2d_backward(benchmark::State& state) {
  Rng rng(3);
  auto x = random_tensor({64, 64, 16}, rng);
  auto k = random_tensor({3, 3, 16, 32}, rng);
  x.set_requires_grad(true);
  k.set_requires_grad(true);
  for (auto _ : state) {
    auto loss = sum(conv2d(x, k, 1, 1));
    loss.backward();
    x.zero_grad();
    k.zero_grad();
  }
}
BENCHMARK(BM_conv2d_backward);

void BM_softmax_rows(benchmark::State& state) {
  Rng rng(4);
  auto x = random_tensor({4096, 8}, rng, -5.0, 5.0);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(softmax(x, 1));
}
BENCHMARK(BM_softmax_rows);

void BM_mean_field_step(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  Rng rng(5);
  Guidance<float> g{random_tensor({m / 8, 8, 3}, rng, 0.0, 1.0)};
  CrfParams<float> params(8, false);
  auto kernel = pairwise_kernel(g, params);
  auto unary = random_tensor({m, 8}, rng);
  NoGradGuard ng;
  auto q = softmax(unary, 1);
  for (auto _ : state)
    benchmark::DoNotOptimize(mean_field_step(q, unary, kernel, params.compatibility));
}
BENCHMARK(BM_mean_field_step)->Arg(64)->Arg(256);

void BM_dfm_forward(benchmark::State& state) {
  Rng rng(6);
  std::vector<FeatureMap<float>> maps;
  for (int i = 0; i < 4; ++i) maps.push_back({random_tensor({8, 8, 32}, rng), i});
  ScoringBank<float> bank(32, 8, 0.5f, rng);
  bank.train_mode = false;
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(dfm_forward(maps, bank));
}
BENCHMARK(BM_dfm_forward);

void BM_encoder_64(benchmark::State& state) {
  Rng rng(7);
  ModelConfig mc;
  auto model = DfnetModel<float>::init(mc);
  model.set_train(false);
  auto img = random_tensor({64, 64, 3}, rng, 0.0, 1.0);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(model.encoder.encode(img, 0));
}
BENCHMARK(BM_encoder_64);

void BM_infer_group(benchmark::State& state) {
  Rng rng(8);
  ModelConfig mc;
  auto model = DfnetModel<float>::init(mc);
  std::vector<InferInput> frames;
  for (int i = 0; i < 2; ++i) frames.push_back({random_tensor({64, 64, 3}, rng, 0.0, 1.0), i});
  InferConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(infer_group(frames, model, cfg));
}
BENCHMARK(BM_infer_group);

}  // namespace

BENCHMARK_MAIN();
