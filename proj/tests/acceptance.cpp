// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "partrain/cli/commands.hpp"
#include "partrain/dataio.hpp"
#include "partrain/layers.hpp"
#include "partrain/merge.hpp"
#include "partrain/netspec.hpp"
#include "partrain/network.hpp"
#include "partrain/partition.hpp"
#include "partrain/trainer.hpp"
#include "support/oracle.hpp"

using namespace partrain;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kMerge64 = 1e-12;
constexpr double kMerge32 = 1e-5;
constexpr std::size_t kMergeInstances = 24;
constexpr std::size_t kGradientInstancesPerKind = 50;
constexpr double kSpeedRatio = 0.6;
constexpr std::size_t kTimingEpochs = 2;
constexpr double kErrorSlackPoints = 0.5;
constexpr std::size_t kSeeds = 5;
constexpr std::size_t kPretrainEpochs = 5;
constexpr std::size_t kFinetuneEpochs = 5;
constexpr double kMaxPearson = 0.999;
constexpr double kMinMomentumEffect = 1e-8;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS" : "FAIL") << " C" << id << " " << name << ": " << o.detail
            << std::endl;
  if (!o.pass) ++failures;
}

void run(int id, const std::string& name, const std::function<Outcome()>& fn) {
  try {
    report(id, name, fn());
  } catch (const std::exception& e) {
    report(id, name, {false, std::string("exception: ") + e.what()});
  }
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<std::size_t> split_rule(std::size_t w, std::size_t k) {
  std::vector<std::size_t> sizes(k, w / k);
  for (std::size_t i = 0; i < w % k; ++i) ++sizes[i];
  return sizes;
}

template <typename T>
std::vector<long double> softmax_row(const T* z, std::size_t n) {
  long double m = z[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max<long double>(m, z[i]);
  std::vector<long double> p(n);
  long double sum = 0;
  for (std::size_t i = 0; i < n; ++i) sum += p[i] = std::exp(static_cast<long double>(z[i]) - m);
  for (auto& v : p) v /= sum;
  return p;
}

template <typename T>
ParameterStore<T> random_store(const NetworkSpec& spec, std::mt19937_64& gen, double scale) {
  ParameterStore<T> p = ParameterStore<T>::zeros(spec);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& b : p.blocks()) {
    for (T& v : b.weights.values()) v = static_cast<T>(u(gen));
    for (T& v : b.bias.values()) v = static_cast<T>(u(gen));
    for (T& v : b.weight_momentum.values()) v = static_cast<T>(u(gen));
    for (T& v : b.bias_momentum.values()) v = static_cast<T>(u(gen));
  }
  return p;
}

Dataset load_mnist_split(const std::string& prefix) {
  const fs::path dir = PARTRAIN_MNIST_DIR;
  return load_mnist_idx(dir / (prefix + "-images-idx3-ubyte"),
                        dir / (prefix + "-labels-idx1-ubyte"));
}

// ---------------------------------------------------------------------------

Outcome table1_counts() {
  const std::size_t widths[4][3] = {{20, 50, 500}, {10, 25, 250}, {4, 10, 100}, {2, 5, 50}};
  const std::size_t expected[4] = {431080, 109295, 18224, 4867};
  const std::size_t ks[4] = {1, 2, 5, 10};
  bool ok = true;
  std::ostringstream d;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t oracle_count =
        oracle::lenet_param_count(widths[i][0], widths[i][1], widths[i][2]);
    const std::size_t direct = count_params(lenet_spec(widths[i][0], widths[i][1], widths[i][2]));
    const std::size_t via_partition =
        ks[i] == 1 ? count_params(lenet_spec()) : count_params(partition(lenet_spec(), ks[i]).sub_specs[0]);
    ok = ok && oracle_count == expected[i] && direct == expected[i] && via_partition == expected[i];
    d << (i ? " " : "") << "K=" << ks[i] << ":" << direct;
  }
  return {ok, d.str()};
}

Outcome quadratic_reduction() {
  const ParamClassBreakdown full = classify_params(lenet_spec());
  const std::size_t full_total = full.total();
  const char* table[3] = {"25.35%", "4.23%", "1.13%"};
  const std::size_t ks[3] = {2, 5, 10};
  const auto rows = cli::count_rows(lenet_spec(), {2, 5, 10});
  bool ok = true;
  std::ostringstream d;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t k = ks[i];
    const ParamClassBreakdown sub = classify_params(partition(lenet_spec(), k).sub_specs[0]);
    const double bound = static_cast<double>(full.quadratic_count) / static_cast<double>(k * k) +
                         static_cast<double>(full.linear_count) / static_cast<double>(k);
    const std::string pct =
        fmt("%.2f%%", 100.0 * static_cast<double>(sub.total()) / static_cast<double>(full_total));
    ok = ok && static_cast<double>(sub.quadratic_count) <= bound && pct == table[i] &&
         cli::percent_label(rows[i]) == table[i];
    d << (i ? " " : "") << "K=" << k << " quadratic " << sub.quadratic_count << "<=" << bound
      << " " << pct;
  }
  return {ok, d.str()};
}

template <typename T>
double merge_deviation_oracle(const PartitionPlan& plan, const std::vector<ParameterStore<T>>& subs,
                              const Tensor<T>& probe) {
  const std::size_t classes = plan.spec.classes();
  const std::size_t n = probe.shape()[0];
  std::vector<long double> mean_logits(n * classes, 0.0L);
  for (std::size_t s = 0; s < subs.size(); ++s) {
    Network<T> net(plan.sub_specs[s]);
    const Tensor<T> z = net.logits(subs[s], probe);
    for (std::size_t i = 0; i < z.size(); ++i) mean_logits[i] += z[i];
  }
  for (auto& v : mean_logits) v /= static_cast<long double>(subs.size());

  const ParameterStore<T> merged = merge<T>(plan, subs);
  Network<T> full(plan.spec);
  const Tensor<T> zm = full.logits(merged, probe);
  double worst = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto pm = softmax_row(zm.data() + r * classes, classes);
    const auto pe = softmax_row(mean_logits.data() + r * classes, classes);
    for (std::size_t c = 0; c < classes; ++c)
      worst = std::max(worst, static_cast<double>(std::fabs(pm[c] - pe[c])));
  }
  return worst;
}

Outcome merge_equivalence() {
  double worst64 = 0.0, worst32 = 0.0;
  std::mt19937_64 gen(2024);
  for (std::size_t inst = 0; inst < kMergeInstances; ++inst) {
    std::uniform_int_distribution<std::size_t> c1d(2, 10), c2d(2, 12), hd(4, 40);
    const std::size_t c1 = c1d(gen), c2 = c2d(gen), h = hd(gen);
    const std::size_t kmax = std::min({c1, c2, h, std::size_t{5}});
    const std::size_t k = std::uniform_int_distribution<std::size_t>(2, kmax)(gen);
    const NetworkSpec spec = lenet_spec(c1, c2, h);
    const PartitionPlan plan = partition(spec, k);
    std::vector<ParameterStore<double>> subs64;
    std::vector<ParameterStore<float>> subs32;
    for (std::size_t s = 0; s < k; ++s) {
      subs64.push_back(random_store<double>(plan.sub_specs[s], gen, 0.3));
      subs32.push_back(subs64.back().cast<float>());
    }
    const Tensor<double> probe =
        oracle::random_tensor({4, 28, 28, 1}, gen, 0.0, 1.0);
    Tensor<float> probe32(probe.shape());
    for (std::size_t i = 0; i < probe.size(); ++i) probe32[i] = static_cast<float>(probe[i]);
    worst64 = std::max(worst64, merge_deviation_oracle(plan, subs64, probe));
    worst32 = std::max(worst32, merge_deviation_oracle(plan, subs32, probe32));
  }
  return {worst64 < kMerge64 && worst32 < kMerge32,
          fmt("%zu instances, max deviation 64-bit %.3g (< %g), 32-bit %.3g (< %g)",
              kMergeInstances, worst64, kMerge64, worst32, kMerge32)};
}

// Finite-difference check of one layer kind on randomized small shapes. Inputs
// are drawn away from the ReLU and max-pool kinks so the central difference
// never straddles one.
Outcome gradient_checks() {
  const char* names[7] = {"dense", "conv2d", "maxpool", "relu", "dropout", "lrn", "softmax_xent"};
  double worst[7] = {};
  std::size_t checked = 0;
  for (int kind = 0; kind < 7; ++kind) {
    for (std::size_t trial = 0; trial < kGradientInstancesPerKind; ++trial) {
      std::mt19937_64 gen(7919 * (kind + 1) + trial);
      std::uniform_int_distribution<std::size_t> dim(3, 8);
      Shape3 in{dim(gen) % 4 + 2, dim(gen) % 4 + 2, dim(gen)};
      LayerKind k;
      switch (kind) {
        case 0: k = layer::Dense{dim(gen)}; break;
        case 1: k = layer::Conv2D{dim(gen), 1 + trial % 2, 1 + (trial / 2) % 2}; break;
        case 2: k = layer::MaxPool{2, 1 + trial % 2}; break;
        case 3: k = layer::ReLU{}; break;
        case 4: k = layer::Dropout{0.2 + 0.1 * static_cast<double>(trial % 5)}; break;
        case 5: {
          const std::size_t groups = trial % 3 == 0 ? 1 : (in.channels % 2 == 0 ? 2 : 1);
          k = layer::Lrn{1 + trial % 3, 1.0 + 0.1 * static_cast<double>(trial % 4),
                         0.1 + 0.05 * static_cast<double>(trial % 5), 0.75, groups};
          break;
        }
        default: {
          const std::size_t classes = dim(gen);
          in = Shape3{1, 1, classes};
          k = layer::SoftmaxXent{};
          break;
        }
      }
      NetworkDescription d{"probe", in, 2, {k, layer::Dense{2}, layer::SoftmaxXent{}}};
      std::size_t index = 0;
      if (kind == 6) {
        d = NetworkDescription{"probe", in, in.channels, {layer::Dense{in.channels}, layer::SoftmaxXent{}}};
        index = 1;
      }
      const NetworkSpec spec(d);
      const ResolvedLayer l = spec.layer(index);
      const bool has = has_params(k);
      ParamBlock<double> p;
      if (has) {
        const ParamShape s = param_shape(l);
        p = {oracle::random_tensor(s.weights, gen), oracle::random_tensor(s.bias, gen, -0.5, 0.5),
             Tensor<double>(s.weights), Tensor<double>(s.bias)};
      }
      Tensor<double> x = oracle::random_tensor({2, l.in.height, l.in.width, l.in.channels}, gen);
      if (kind == 2 || kind == 3) {
        // Distinct values at least 1e-3 apart, none within 5e-3 of zero.
        std::vector<std::size_t> perm(x.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), gen);
        for (std::size_t i = 0; i < x.size(); ++i) {
          const double v = 0.005 + 0.002 * static_cast<double>(perm[i]);
          x[i] = (perm[i] % 2 == 0) ? v : -v;
        }
      }
      const Tensor<double> r =
          oracle::random_tensor({2, l.out.height, l.out.width, l.out.channels}, gen);
      const Rng stream(trial + 101);
      const auto objective = [&] {
        Rng s = stream;
        const Tensor<double> y = forward<double>(l, has ? &p : nullptr, x, Mode::train, s);
        long double acc = 0;
        for (std::size_t i = 0; i < y.size(); ++i) acc += static_cast<long double>(r[i]) * y[i];
        return static_cast<double>(acc);
      };
      Rng s = stream;
      LayerCache<double> cache;
      forward<double>(l, has ? &p : nullptr, x, Mode::train, s, &cache);
      const LayerGradients<double> g = backward<double>(l, has ? &p : nullptr, cache, r);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double n = oracle::central_difference(objective, &x[i], oracle::kFdStep);
        worst[kind] = std::max(worst[kind], oracle::rel_error(g.input[i], n));
      }
      if (has) {
        for (std::size_t i = 0; i < p.weights.size(); ++i) {
          const double n = oracle::central_difference(objective, &p.weights[i], oracle::kFdStep);
          worst[kind] = std::max(worst[kind], oracle::rel_error(g.weights[i], n));
        }
        for (std::size_t i = 0; i < p.bias.size(); ++i) {
          const double n = oracle::central_difference(objective, &p.bias[i], oracle::kFdStep);
          worst[kind] = std::max(worst[kind], oracle::rel_error(g.bias[i], n));
        }
      }
      ++checked;
    }
  }
  bool ok = true;
  std::ostringstream d;
  d << checked << " instances, max rel error";
  for (int kind = 0; kind < 7; ++kind) {
    ok = ok && worst[kind] < oracle::kFdTolerance;
    d << " " << names[kind] << "=" << fmt("%.2g", worst[kind]);
  }
  d << " (< " << oracle::kFdTolerance << ", step " << oracle::kFdStep << ")";
  return {ok, d.str()};
}

double mean_epoch_seconds(const NetworkSpec& spec, const Dataset& data, std::uint64_t seed) {
  TrainConfig c;
  c.learning_rate = 0.01;
  c.momentum = 0.9;
  c.batch_size = 500;
  Network<float> net(spec);
  TrainState<float> state = init_state<float>(spec, seed);
  const auto rows = train_epochs<float>(net, state, data, nullptr, c, kTimingEpochs, {"t"});
  double total = 0.0;
  for (const auto& r : rows) total += r.wall_seconds;
  return total / static_cast<double>(rows.size());
}

Outcome desk_speed(const Dataset& all10k) {
  const NetworkSpec full = lenet_spec();
  const NetworkSpec sub = partition(full, 2).sub_specs[0];
  // Interleave the two measurements so drift affects both alike.
  const double full_a = mean_epoch_seconds(full, all10k, 1);
  const double sub_a = mean_epoch_seconds(sub, all10k, 1);
  const double full_b = mean_epoch_seconds(full, all10k, 2);
  const double sub_b = mean_epoch_seconds(sub, all10k, 2);
  const double full_s = (full_a + full_b) / 2, sub_s = (sub_a + sub_b) / 2;
  const double ratio = sub_s / full_s;
  return {ratio <= kSpeedRatio,
          fmt("%zu samples, single thread, K=1 %.3f s/epoch, K=2 sub-model %.3f s/epoch, "
              "ratio %.3f (<= %.2f)",
              all10k.size(), full_s, sub_s, ratio, kSpeedRatio)};
}

struct SeedRun {
  double baseline_error_pct = 0.0;
  double partitioned_error_pct = 0.0;
  double pearson = 0.0;
  double disagreement = 0.0;
};

template <typename T>
std::size_t oracle_errors(const NetworkSpec& spec, const ParameterStore<T>& params,
                          const Dataset& data) {
  Network<T> net(spec);
  const std::size_t classes = spec.classes();
  std::size_t errors = 0;
  for (std::size_t start = 0; start < data.size(); start += 500) {
    std::vector<std::size_t> idx(std::min<std::size_t>(500, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<T> z = net.logits(params, gather_batch<T>(data, idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const T* row = z.data() + i * classes;
      const std::size_t pred = static_cast<std::size_t>(std::max_element(row, row + classes) - row);
      if (pred != data.labels[idx[i]]) ++errors;
    }
  }
  return errors;
}

// Correct-class probabilities and argmax predictions of one model.
template <typename T>
void model_outputs(const NetworkSpec& spec, const ParameterStore<T>& params, const Dataset& data,
                   std::vector<double>& prob, std::vector<std::size_t>& pred) {
  Network<T> net(spec);
  const std::size_t classes = spec.classes();
  prob.assign(data.size(), 0.0);
  pred.assign(data.size(), 0);
  for (std::size_t start = 0; start < data.size(); start += 500) {
    std::vector<std::size_t> idx(std::min<std::size_t>(500, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<T> z = net.logits(params, gather_batch<T>(data, idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const T* row = z.data() + i * classes;
      const auto p = softmax_row(row, classes);
      prob[idx[i]] = static_cast<double>(p[data.labels[idx[i]]]);
      pred[idx[i]] = static_cast<std::size_t>(std::max_element(row, row + classes) - row);
    }
  }
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<SeedRun> mnist_runs(const Dataset& train, const Dataset& test) {
  std::vector<SeedRun> out;
  for (std::size_t rep = 0; rep < kSeeds; ++rep) {
    const std::uint64_t seed = repetition_seed(1, rep);
    TrainConfig c;
    c.learning_rate = 0.1;
    c.momentum = 0.9;
    c.batch_size = 500;
    c.master_seed = seed;
    c.precision = 32;

    c.k = 1;
    c.pretrain_epochs = 0;
    c.finetune_epochs = kPretrainEpochs + kFinetuneEpochs;
    const auto base = run_pipeline<float>(lenet_spec(), c, train, &test, "baseline");

    c.k = 2;
    c.pretrain_epochs = kPretrainEpochs;
    c.finetune_epochs = kFinetuneEpochs;
    const auto part = run_pipeline<float>(lenet_spec(), c, train, &test, "partitioned");

    SeedRun r;
    const double n = static_cast<double>(test.size());
    r.baseline_error_pct = 100.0 * static_cast<double>(oracle_errors(lenet_spec(), base.final_params, test)) / n;
    r.partitioned_error_pct = 100.0 * static_cast<double>(oracle_errors(lenet_spec(), part.final_params, test)) / n;
    std::vector<double> p0, p1;
    std::vector<std::size_t> a0, a1;
    model_outputs(part.plan->sub_specs[0], part.submodels[0], test, p0, a0);
    model_outputs(part.plan->sub_specs[1], part.submodels[1], test, p1, a1);
    r.pearson = pearson(p0, p1);
    std::size_t differ = 0;
    for (std::size_t i = 0; i < a0.size(); ++i) differ += a0[i] != a1[i];
    r.disagreement = static_cast<double>(differ) / n;
    std::cout << fmt("  seed %llu: baseline %.2f%%, partitioned %.2f%%, sub-model pearson %.4f, "
                     "disagreement %.4f",
                     static_cast<unsigned long long>(seed), r.baseline_error_pct,
                     r.partitioned_error_pct, r.pearson, r.disagreement)
              << std::endl;
    out.push_back(r);
  }
  return out;
}

Outcome no_performance_loss(const std::vector<SeedRun>& runs) {
  double base = 0, part = 0;
  for (const auto& r : runs) {
    base += r.baseline_error_pct;
    part += r.partitioned_error_pct;
  }
  base /= static_cast<double>(runs.size());
  part /= static_cast<double>(runs.size());
  return {part <= base + kErrorSlackPoints,
          fmt("%zu seeds, mean test error K=1 %.3f%%, K=2 (%zu+%zu) %.3f%% (<= %.3f%%)",
              runs.size(), base, kPretrainEpochs, kFinetuneEpochs, part, base + kErrorSlackPoints)};
}

Outcome diversity(const std::vector<SeedRun>& runs) {
  bool ok = !runs.empty();
  double max_p = -1, min_dis = 1;
  for (const auto& r : runs) {
    ok = ok && r.disagreement > 0 && r.pearson < kMaxPearson;
    max_p = std::max(max_p, r.pearson);
    min_dis = std::min(min_dis, r.disagreement);
  }
  return {ok, fmt("min disagreement %.4f (> 0), max pearson %.4f (< %.3f)", min_dis, max_p,
                  kMaxPearson)};
}

Outcome parallel_equivalence(const Dataset& train, const Dataset& test) {
  bool ok = true;
  std::ostringstream d;
  for (std::size_t k : {2u, 5u}) {
    TrainConfig c;
    c.k = k;
    c.pretrain_epochs = 1;
    c.finetune_epochs = 1;
    c.batch_size = 100;
    c.master_seed = 31;
    c.precision = 32;
    c.parallel = false;
    const auto serial = run_pipeline<float>(lenet_spec(), c, train, &test);
    c.parallel = true;
    c.max_threads = k == 5 ? 2 : 0;
    const auto parallel = run_pipeline<float>(lenet_spec(), c, train, &test);
    const bool same = *serial.merged == *parallel.merged &&
                      serial.final_params == parallel.final_params;
    ok = ok && same;
    d << (k == 2 ? "" : ", ") << "K=" << k << (same ? " bit-identical" : " differs");
  }
  d << " (merged and fine-tuned parameters, " << train.size() << " samples)";
  return {ok, d.str()};
}

Outcome momentum_transfer(const Dataset& train) {
  const NetworkSpec spec = lenet_spec();
  const std::size_t k = 2;
  const PartitionPlan plan = partition(spec, k);
  std::mt19937_64 gen(99);
  std::vector<ParameterStore<double>> subs;
  for (std::size_t s = 0; s < k; ++s) subs.push_back(random_store<double>(plan.sub_specs[s], gen, 0.05));
  const ParameterStore<double> merged = merge<double>(plan, subs);

  // Output layer: hidden unit u of sub-model s sits at offset(s) + u.
  const std::size_t out_block = merged.size() - 1;
  const std::vector<std::size_t> sizes = split_rule(500, k);
  bool exact = true;
  std::size_t offset = 0;
  for (std::size_t s = 0; s < k; ++s) {
    const auto& sb = subs[s].block(out_block);
    for (std::size_t u = 0; u < sizes[s]; ++u)
      for (std::size_t o = 0; o < 10; ++o)
        exact = exact && merged.block(out_block).weight_momentum[(offset + u) * 10 + o] ==
                             sb.weight_momentum[u * 10 + o] / static_cast<double>(k);
    offset += sizes[s];
  }
  for (std::size_t o = 0; o < 10; ++o) {
    double sum = 0;
    for (std::size_t s = 0; s < k; ++s) sum += subs[s].block(out_block).bias_momentum[o];
    exact = exact && merged.block(out_block).bias_momentum[o] == sum / static_cast<double>(k);
  }

  TrainConfig c;
  c.learning_rate = 0.05;
  c.momentum = 0.9;
  c.batch_size = 64;
  std::vector<std::size_t> idx(64);
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor<double> batch = gather_batch<double>(train, idx);
  const std::vector<std::uint16_t> labels = gather_labels(train, idx);

  Network<double> net(spec);
  TrainState<double> with{merged, 0, Rng(5)};
  ParameterStore<double> zeroed_params = merged;
  for (auto& b : zeroed_params.blocks()) {
    b.weight_momentum.fill(0.0);
    b.bias_momentum.fill(0.0);
  }
  TrainState<double> without{zeroed_params, 0, Rng(5)};
  sgd_step(net, with, batch, labels, c);
  sgd_step(net, without, batch, labels, c);
  double delta = 0;
  for (std::size_t b = 0; b < merged.size(); ++b) {
    const auto& x = with.params.block(b);
    const auto& y = without.params.block(b);
    for (std::size_t i = 0; i < x.weights.size(); ++i)
      delta = std::max(delta, std::fabs(x.weights[i] - y.weights[i]));
    for (std::size_t i = 0; i < x.bias.size(); ++i)
      delta = std::max(delta, std::fabs(x.bias[i] - y.bias[i]));
  }
  return {exact && delta > kMinMomentumEffect,
          fmt("output momenta %s the merge transform, first-step max |delta| %.3g (> %g)",
              exact ? "exactly match" : "DO NOT match", delta, kMinMomentumEffect)};
}

Outcome lrn_duplication() {
  const auto make = [](double alpha) {
    return NetworkSpec(NetworkDescription{
        "lenet-lrn", {28, 28, 1}, 10,
        {layer::Conv2D{20, 5, 5}, layer::ReLU{}, layer::Lrn{2, 2.0, alpha, 0.75, 1},
         layer::MaxPool{2, 2}, layer::Conv2D{50, 5, 5}, layer::ReLU{},
         layer::Lrn{2, 2.0, alpha, 0.75, 1}, layer::MaxPool{2, 2}, layer::Dense{500},
         layer::ReLU{}, layer::Dropout{0.5}, layer::Dense{10}, layer::SoftmaxXent{}}});
  };
  const NetworkSpec spec = make(1e-4);
  const std::size_t k = 2;
  const bool rejected = !validate_partitionable(spec).empty();
  const NetworkSpec dup = duplicate_lrn(spec, k);
  const bool accepted = validate_partitionable(dup, k).empty();
  const PartitionPlan plan = partition(dup, k);
  const bool plan_ok = verify_plan(plan, dup).empty();

  const NetworkSpec flat = make(0.0);
  const NetworkSpec flat_dup = duplicate_lrn(flat, k);
  Rng init(3);
  const ParameterStore<double> params = ParameterStore<double>::glorot(flat, init);
  std::mt19937_64 gen(8);
  const Tensor<double> x = oracle::random_tensor({3, 28, 28, 1}, gen, 0.0, 1.0);
  Network<double> a(flat), b(flat_dup);
  const bool identical = a.logits(params, x) == b.logits(params, x);
  return {rejected && accepted && plan_ok && identical,
          fmt("rejected before duplication: %s, accepted after: %s, plan verified: %s, "
              "alpha=0 outputs identical: %s",
              rejected ? "yes" : "no", accepted ? "yes" : "no", plan_ok ? "yes" : "no",
              identical ? "yes" : "no")};
}

}  // namespace

// With no arguments every criterion runs. Otherwise only the listed ones,
// e.g. `partrain_acceptance 6 7`.
int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  const auto wanted = [&](int id) {
    return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
  };

  if (wanted(1)) run(1, "table1-param-counts", table1_counts);
  if (wanted(2)) run(2, "quadratic-reduction", quadratic_reduction);
  if (wanted(3)) run(3, "merge-ensemble-equivalence", merge_equivalence);
  if (wanted(4)) run(4, "gradient-finite-differences", gradient_checks);
  if (wanted(10)) run(10, "lrn-duplication", lrn_duplication);

  const std::vector<int> data_ids{5, 6, 7, 8, 9};
  if (std::none_of(data_ids.begin(), data_ids.end(), wanted)) return failures == 0 ? 0 : 1;

  Dataset train, test;
  try {
    train = load_mnist_split("train");
    test = load_mnist_split("t10k");
  } catch (const std::exception& e) {
    const Outcome missing{false, std::string("MNIST not loaded: ") + e.what()};
    for (int id : data_ids) {
      if (wanted(id)) report(id, "needs-mnist", missing);
    }
    return 1;
  }
  std::cout << "MNIST: " << train.size() << " train, " << test.size() << " test" << std::endl;

  if (wanted(9)) run(9, "momentum-transfer", [&] { return momentum_transfer(train); });
  if (wanted(8)) {
    std::vector<std::size_t> idx(1000);
    std::iota(idx.begin(), idx.end(), 0);
    const Dataset small_train = train.subset(idx);
    std::vector<std::size_t> eidx(200);
    std::iota(eidx.begin(), eidx.end(), 0);
    const Dataset small_test = test.subset(eidx);
    run(8, "parallel-serial-bit-equivalence",
        [&] { return parallel_equivalence(small_train, small_test); });
  }
  if (wanted(5)) run(5, "desk-speed", [&] { return desk_speed(concatenate(train, test)); });

  if (wanted(6) || wanted(7)) {
    std::vector<SeedRun> runs;
    try {
      runs = mnist_runs(train, test);
    } catch (const std::exception& e) {
      std::cout << "  training failed: " << e.what() << std::endl;
    }
    if (wanted(6)) {
      run(6, "no-performance-loss",
          [&] { return runs.empty() ? Outcome{false, "no runs"} : no_performance_loss(runs); });
    }
    if (wanted(7)) run(7, "submodel-diversity", [&] { return diversity(runs); });
  }

  std::cout << (failures == 0 ? "acceptance: all criteria pass" : "acceptance: failures") << " ("
            << failures << " failed)" << std::endl;
  return failures == 0 ? 0 : 1;
}
