#include <benchmark/benchmark.h>

#include <numeric>

#include "partrain/dataio.hpp"
#include "partrain/layers.hpp"
#include "partrain/network.hpp"
#include "partrain/partition.hpp"
#include "partrain/trainer.hpp"

namespace {

using namespace partrain;

// Random images shaped like MNIST; the pixel values do not affect timing.
Dataset fake_mnist(std::size_t n) {
  Dataset d;
  d.shape = {28, 28, 1};
  d.classes = 10;
  d.pixels.resize(n * 784);
  d.labels.resize(n);
  Rng rng(3);
  for (float& v : d.pixels) v = static_cast<float>(rng.uniform());
  for (auto& l : d.labels) l = static_cast<std::uint16_t>(rng.below(10));
  return d;
}

NetworkSpec lenet_for(std::size_t k) {
  return k == 1 ? lenet_spec() : partition(lenet_spec(), k).sub_specs[0];
}

// One SGD step on a batch of range(1) samples for the K = range(0) sub-model.
void BM_LenetTrainStep(benchmark::State& state) {
  const NetworkSpec spec = lenet_for(static_cast<std::size_t>(state.range(0)));
  const std::size_t batch = static_cast<std::size_t>(state.range(1));
  const Dataset data = fake_mnist(batch);
  std::vector<std::size_t> idx(batch);
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor<float> x = gather_batch<float>(data, idx);
  const std::vector<std::uint16_t> labels = gather_labels(data, idx);
  TrainConfig config;
  config.learning_rate = 0.01;
  Network<float> net(spec);
  TrainState<float> train_state = init_state<float>(spec, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sgd_step(net, train_state, x, labels, config));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
  state.counters["params"] = static_cast<double>(count_params(spec));
}
BENCHMARK(BM_LenetTrainStep)
    ->ArgsProduct({{1, 2, 5, 10}, {100}})
    ->ArgNames({"K", "batch"})
    ->Unit(benchmark::kMillisecond);

// Eval-mode forward pass of the full LeNet.
void BM_LenetForward(benchmark::State& state) {
  const NetworkSpec spec = lenet_for(static_cast<std::size_t>(state.range(0)));
  const Dataset data = fake_mnist(100);
  std::vector<std::size_t> idx(100);
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor<float> x = gather_batch<float>(data, idx);
  Network<float> net(spec);
  Rng rng(1);
  const ParameterStore<float> params = ParameterStore<float>::glorot(spec, rng);
  for (auto _ : state) benchmark::DoNotOptimize(net.logits(params, x));
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_LenetForward)->Arg(1)->Arg(2)->ArgName("K")->Unit(benchmark::kMillisecond);

// Forward of the first LeNet convolution alone.
void BM_ConvForward(benchmark::State& state) {
  const std::size_t filters = static_cast<std::size_t>(state.range(0));
  const NetworkSpec spec(NetworkDescription{
      "conv", {28, 28, 1}, 10,
      {layer::Conv2D{filters, 5, 5}, layer::Dense{10}, layer::SoftmaxXent{}}});
  Rng rng(2);
  const ParameterStore<float> params = ParameterStore<float>::glorot(spec, rng);
  const Dataset data = fake_mnist(100);
  std::vector<std::size_t> idx(100);
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor<float> x = gather_batch<float>(data, idx);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        forward<float>(spec.layer(0), &params.block(0), x, Mode::eval, rng));
  }
}
BENCHMARK(BM_ConvForward)->Arg(20)->Arg(10)->Arg(2)->ArgName("filters")->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
