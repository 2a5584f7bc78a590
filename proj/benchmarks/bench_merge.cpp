#include <benchmark/benchmark.h>

#include <vector>

#include "partrain/merge.hpp"
#include "partrain/partition.hpp"

namespace {

using namespace partrain;

void BM_PartitionLenet(benchmark::State& state) {
  const NetworkSpec spec = lenet_spec();
  const std::size_t k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(partition(spec, k));
}
BENCHMARK(BM_PartitionLenet)->Arg(2)->Arg(5)->Arg(10)->ArgName("K");

void BM_MergeLenet(benchmark::State& state) {
  const std::size_t k = static_cast<std::size_t>(state.range(0));
  const PartitionPlan plan = partition(lenet_spec(), k);
  std::vector<ParameterStore<float>> subs;
  Rng rng(4);
  for (const NetworkSpec& s : plan.sub_specs) subs.push_back(ParameterStore<float>::glorot(s, rng));
  for (auto _ : state) benchmark::DoNotOptimize(merge<float>(plan, subs));
}
BENCHMARK(BM_MergeLenet)->Arg(2)->Arg(5)->Arg(10)->ArgName("K")->Unit(benchmark::kMicrosecond);

}  // namespace
