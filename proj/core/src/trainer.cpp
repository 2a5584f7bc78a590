#include "partrain/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <thread>

namespace partrain {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <typename T>
void for_each_eval_batch(const Dataset& data, std::size_t batch_size, auto&& fn) {
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    fn(start, idx, gather_batch<T>(data, idx));
  }
}

template <typename T>
std::size_t argmax_row(const Tensor<T>& t, std::size_t row, std::size_t classes) {
  const T* p = t.data() + row * classes;
  return static_cast<std::size_t>(std::max_element(p, p + classes) - p);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 && syy == 0.0) return std::equal(x.begin(), x.end(), y.begin()) ? 1.0 : 0.0;
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (k == 0) throw ConfigError("K must be >= 1");
  if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
}

const char* to_string(Phase phase) {
  return phase == Phase::pretrain ? "pretrain" : "finetune";
}

template <typename T>
TrainState<T> init_state(const NetworkSpec& spec, std::uint64_t seed) {
  TrainState<T> state;
  state.rng = Rng(seed);
  state.params = ParameterStore<T>::glorot(spec, state.rng);
  return state;
}

template <typename T>
void apply_momentum_update(ParameterStore<T>& params, const Gradients<T>& grads,
                           double learning_rate, double momentum) {
  if (grads.weights.size() != params.size() || grads.bias.size() != params.size()) {
    throw ShapeError("gradient block count differs from parameter block count");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    require_finite(grads.weights[b], "weight gradient of block " + std::to_string(b));
    require_finite(grads.bias[b], "bias gradient of block " + std::to_string(b));
  }
  const T lr = static_cast<T>(learning_rate);
  const T mu = static_cast<T>(momentum);
  const auto update = [&](Tensor<T>& p, Tensor<T>& v, const Tensor<T>& g) {
    if (p.shape() != g.shape()) throw ShapeError("gradient shape differs from parameter shape");
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = mu * v[i] - lr * g[i];
      p[i] += v[i];
    }
  };
  for (std::size_t b = 0; b < params.size(); ++b) {
    ParamBlock<T>& blk = params.block(b);
    update(blk.weights, blk.weight_momentum, grads.weights[b]);
    update(blk.bias, blk.bias_momentum, grads.bias[b]);
  }
}

template <typename T>
BatchLoss sgd_step(Network<T>& net, TrainState<T>& state, const Tensor<T>& batch,
                   std::span<const std::uint16_t> labels, const TrainConfig& config) {
  Gradients<T> grads;
  const BatchLoss loss = net.train_batch(state.params, batch, labels, state.rng, grads);
  apply_momentum_update(state.params, grads, config.learning_rate, config.momentum);
  return loss;
}

template <typename T>
EvalResult evaluate(Network<T>& net, const ParameterStore<T>& params, const Dataset& data,
                    std::size_t batch_size) {
  EvalResult r;
  r.count = data.size();
  const std::size_t classes = net.spec().classes();
  for_each_eval_batch<T>(data, batch_size, [&](std::size_t, std::span<const std::size_t> idx,
                                               const Tensor<T>& batch) {
    const Tensor<T> z = net.logits(params, batch);
    for (std::size_t s = 0; s < idx.size(); ++s) {
      const std::uint16_t label = data.labels[idx[s]];
      r.loss += static_cast<double>(
          softmax_xent<T>(z.values().subspan(s * classes, classes), label).loss);
      if (argmax_row(z, s, classes) != label) ++r.errors;
    }
  });
  if (r.count > 0) r.loss /= static_cast<double>(r.count);
  return r;
}

template <typename T>
std::vector<MetricsRow> train_epochs(Network<T>& net, TrainState<T>& state,
                                     const Dataset& train, const Dataset* eval,
                                     const TrainConfig& config, std::size_t epochs,
                                     const Lineage& lineage) {
  std::vector<MetricsRow> rows;
  if (epochs == 0) return rows;
  if (train.size() == 0) throw ConfigError("training set is empty");
  config.validate();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double cumulative = lineage.start_seconds;

  for (std::size_t e = 0; e < epochs; ++e) {
    const auto start = Clock::now();
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[state.rng.below(i)]);
    }
    double loss_sum = 0.0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - first);
      const std::span<const std::size_t> idx(order.data() + first, count);
      const Tensor<T> batch = gather_batch<T>(train, idx);
      const std::vector<std::uint16_t> labels = gather_labels(train, idx);
      loss_sum += sgd_step(net, state, batch, labels, config).loss * static_cast<double>(count);
    }
    ++state.epoch;

    MetricsRow row;
    row.run_id = lineage.run_id;
    row.phase = lineage.phase;
    row.submodel = lineage.submodel;
    row.epoch = state.epoch;
    row.train_loss = loss_sum / static_cast<double>(order.size());
    row.eval_loss = std::numeric_limits<double>::quiet_NaN();
    if (eval != nullptr) {
      const EvalResult r = evaluate(net, state.params, *eval);
      row.eval_loss = r.loss;
      row.eval_errors = r.errors;
    }
    row.wall_seconds = seconds_since(start);
    cumulative += row.wall_seconds;
    row.cumulative_seconds = cumulative;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::uint64_t> submodel_seeds(const TrainConfig& config) {
  std::vector<std::uint64_t> seeds(config.k);
  for (std::size_t i = 0; i < config.k; ++i) seeds[i] = derive_seed(config.master_seed, i);
  return seeds;
}

template <typename T>
PretrainResult<T> pretrain(const PartitionPlan& plan, const TrainConfig& config,
                           std::span<const std::uint64_t> seeds, const Dataset& train,
                           const Dataset* eval, const std::string& run_id) {
  config.validate();
  if (seeds.size() != plan.k) throw ConfigError("need one seed per sub-model");
  const std::size_t k = plan.k;

  PretrainResult<T> result;
  result.states.resize(k);
  std::vector<std::vector<MetricsRow>> rows(k);
  std::vector<std::exception_ptr> errors(k);

  const auto task = [&](std::size_t i) {
    try {
      Network<T> net(plan.sub_specs[i]);
      result.states[i] = init_state<T>(plan.sub_specs[i], seeds[i]);
      rows[i] = train_epochs(net, result.states[i], train, eval, config, config.pretrain_epochs,
                             Lineage{run_id, Phase::pretrain, static_cast<int>(i), 0.0});
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const auto start = Clock::now();
  if (config.parallel && k > 1) {
    const std::size_t workers =
        config.max_threads == 0 ? k : std::min<std::size_t>(config.max_threads, k);
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < k; i = next++) task(i);
      });
    }
  } else {
    for (std::size_t i = 0; i < k; ++i) task(i);
  }
  result.seconds = seconds_since(start);

  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (auto& r : rows) {
    result.metrics.insert(result.metrics.end(), std::make_move_iterator(r.begin()),
                          std::make_move_iterator(r.end()));
  }
  return result;
}

DiversityReport make_diversity_report(std::size_t samples, std::size_t models,
                                      std::vector<double> correct_prob,
                                      std::vector<std::size_t> predictions) {
  if (models < 2) throw Error("diversity needs at least two models");
  if (correct_prob.size() != samples * models || predictions.size() != samples * models) {
    throw ShapeError("diversity matrices must be samples x models");
  }
  DiversityReport r{samples, models, std::move(correct_prob), std::move(predictions), {}};
  std::vector<double> x(samples), y(samples);
  for (std::size_t a = 0; a < models; ++a) {
    for (std::size_t b = a + 1; b < models; ++b) {
      PairStats p{a, b, 0.0, 0.0, 0.0};
      std::size_t differ = 0;
      for (std::size_t s = 0; s < samples; ++s) {
        x[s] = r.prob(s, a);
        y[s] = r.prob(s, b);
        p.mean_abs_diff += std::abs(x[s] - y[s]);
        if (r.predictions[s * models + a] != r.predictions[s * models + b]) ++differ;
      }
      if (samples > 0) {
        p.mean_abs_diff /= static_cast<double>(samples);
        p.disagreement = static_cast<double>(differ) / static_cast<double>(samples);
        p.pearson = pearson(x, y);
      }
      r.pairs.push_back(p);
    }
  }
  return r;
}

template <typename T>
DiversityReport diversity_report(std::span<const Model<T>> models, const Dataset& data) {
  const std::size_t m = models.size();
  if (m < 2) throw Error("diversity needs at least two models");
  std::vector<double> probs(data.size() * m);
  std::vector<std::size_t> preds(data.size() * m);
  for (std::size_t j = 0; j < m; ++j) {
    Network<T> net(models[j].spec);
    const std::size_t classes = models[j].spec.classes();
    for_each_eval_batch<T>(data, 500, [&](std::size_t first, std::span<const std::size_t> idx,
                                          const Tensor<T>& batch) {
      const Tensor<T> p = net.probabilities(models[j].params, batch);
      for (std::size_t s = 0; s < idx.size(); ++s) {
        probs[(first + s) * m + j] = static_cast<double>(p[s * classes + data.labels[idx[s]]]);
        preds[(first + s) * m + j] = argmax_row(p, s, classes);
      }
    });
  }
  return make_diversity_report(data.size(), m, std::move(probs), std::move(preds));
}

template <typename T>
PipelineResult<T> run_pipeline(const NetworkSpec& spec, const TrainConfig& config,
                               const Dataset& train, const Dataset* eval,
                               const std::string& run_id) {
  config.validate();
  if (!(train.shape == spec.input()) || train.classes != spec.classes()) {
    throw ConfigError("dataset shape " + to_string(train.shape) + " with " +
                      std::to_string(train.classes) + " classes does not fit network '" +
                      spec.name() + "'");
  }
  PipelineResult<T> result{spec, {}, std::nullopt, {}, std::nullopt, {}, 0.0,
                           std::nullopt, std::nullopt, std::nullopt, std::nullopt, std::nullopt};
  Network<T> full(spec);

  if (config.k == 1) {
    TrainState<T> state = init_state<T>(spec, derive_seed(config.master_seed, 0));
    result.metrics = train_epochs(full, state, train, eval, config,
                                  config.pretrain_epochs + config.finetune_epochs,
                                  Lineage{run_id, Phase::finetune, kFullModel, 0.0});
    result.final_params = std::move(state.params);
  } else {
    result.plan = partition(spec, config.k);
    const PartitionPlan& plan = *result.plan;
    const std::vector<std::uint64_t> seeds = submodel_seeds(config);
    PretrainResult<T> pre = pretrain<T>(plan, config, seeds, train, eval, run_id);
    result.metrics = std::move(pre.metrics);
    result.pretrain_seconds = pre.seconds;
    for (auto& s : pre.states) result.submodels.push_back(std::move(s.params));

    result.merged = merge<T>(plan, result.submodels);

    if (eval != nullptr && eval->size() > 0) {
      std::vector<Model<T>> models;
      for (std::size_t j = 0; j < plan.k; ++j) models.push_back({plan.sub_specs[j], result.submodels[j]});
      result.diversity = diversity_report<T>(models, *eval);

      double deviation = 0.0;
      std::size_t merged_errors = 0;
      std::size_t ensemble_errors = 0;
      const std::size_t classes = spec.classes();
      for_each_eval_batch<T>(*eval, 500, [&](std::size_t, std::span<const std::size_t> idx,
                                             const Tensor<T>& batch) {
        const Tensor<T> merged_probs = full.probabilities(*result.merged, batch);
        const Tensor<T> ensemble_probs = softmax(ensemble_logits<T>(models, batch));
        for (std::size_t i = 0; i < merged_probs.size(); ++i) {
          deviation = std::max(deviation, std::abs(static_cast<double>(merged_probs[i]) -
                                                   static_cast<double>(ensemble_probs[i])));
        }
        for (std::size_t s = 0; s < idx.size(); ++s) {
          if (argmax_row(merged_probs, s, classes) != eval->labels[idx[s]]) ++merged_errors;
          if (argmax_row(ensemble_probs, s, classes) != eval->labels[idx[s]]) ++ensemble_errors;
        }
      });
      result.merge_deviation = deviation;
      result.merged_errors_at_merge = merged_errors;
      result.ensemble_errors_at_merge = ensemble_errors;
    }

    TrainState<T> state;
    state.params = *result.merged;
    state.rng = Rng(derive_seed(config.master_seed, config.k));
    std::vector<MetricsRow> tail =
        train_epochs(full, state, train, eval, config, config.finetune_epochs,
                     Lineage{run_id, Phase::finetune, kFullModel, pre.seconds});
    result.metrics.insert(result.metrics.end(), tail.begin(), tail.end());
    result.final_params = std::move(state.params);
  }

  if (eval != nullptr && eval->size() > 0) {
    if (!result.metrics.empty() && result.metrics.back().submodel == kFullModel) {
      const MetricsRow& last = result.metrics.back();
      result.final_eval = EvalResult{last.eval_loss, last.eval_errors, eval->size()};
    } else {
      result.final_eval = evaluate(full, result.final_params, *eval);
    }
  }
  return result;
}

#define PARTRAIN_INSTANTIATE_TRAINER(T)                                                      \
  template TrainState<T> init_state<T>(const NetworkSpec&, std::uint64_t);                  \
  template void apply_momentum_update(ParameterStore<T>&, const Gradients<T>&, double,       \
                                      double);                                               \
  template BatchLoss sgd_step(Network<T>&, TrainState<T>&, const Tensor<T>&,                 \
                              std::span<const std::uint16_t>, const TrainConfig&);           \
  template EvalResult evaluate(Network<T>&, const ParameterStore<T>&, const Dataset&,       \
                               std::size_t);                                                 \
  template std::vector<MetricsRow> train_epochs(Network<T>&, TrainState<T>&, const Dataset&, \
                                                const Dataset*, const TrainConfig&,          \
                                                std::size_t, const Lineage&);                \
  template PretrainResult<T> pretrain<T>(const PartitionPlan&, const TrainConfig&,           \
                                         std::span<const std::uint64_t>, const Dataset&,     \
                                         const Dataset*, const std::string&);                \
  template DiversityReport diversity_report<T>(std::span<const Model<T>>, const Dataset&);   \
  template PipelineResult<T> run_pipeline<T>(const NetworkSpec&, const TrainConfig&,         \
                                             const Dataset&, const Dataset*,                 \
                                             const std::string&);

PARTRAIN_INSTANTIATE_TRAINER(float)
PARTRAIN_INSTANTIATE_TRAINER(double)

#undef PARTRAIN_INSTANTIATE_TRAINER

}  // namespace partrain
