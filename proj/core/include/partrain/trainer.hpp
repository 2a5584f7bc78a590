#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "partrain/dataio.hpp"
#include "partrain/merge.hpp"
#include "partrain/network.hpp"
#include "partrain/params.hpp"
#include "partrain/partition.hpp"
#include "partrain/rng.hpp"

namespace partrain {

struct TrainConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::size_t batch_size = 500;
  std::size_t pretrain_epochs = 0;
  std::size_t finetune_epochs = 0;
  std::size_t k = 1;
  std::uint64_t master_seed = 1;
  /// 32 or 64; selects the scalar type the CLI instantiates.
  int precision = 32;
  /// Train sub-models concurrently. Results are identical either way.
  bool parallel = false;
  /// Upper bound on concurrent sub-model tasks; 0 means one per sub-model.
  std::size_t max_threads = 0;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

enum class Phase { pretrain, finetune };

const char* to_string(Phase phase);

/// Sub-model id used for the full (merged or baseline) model.
inline constexpr int kFullModel = -1;

/// One epoch of one lineage (a sub-model or the full model).
struct MetricsRow {
  std::string run_id;
  Phase phase = Phase::finetune;
  int submodel = kFullModel;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  /// NaN when no evaluation set was given.
  double eval_loss = 0.0;
  std::size_t eval_errors = 0;
  double wall_seconds = 0.0;
  double cumulative_seconds = 0.0;
};

template <typename T>
struct TrainState {
  ParameterStore<T> params;
  std::size_t epoch = 0;
  Rng rng{0};
};

/// Glorot-initialised parameters drawn from Rng(seed); the same stream then
/// drives shuffling and dropout.
template <typename T>
TrainState<T> init_state(const NetworkSpec& spec, std::uint64_t seed);

/// Classical momentum: v <- mu v - lr g, p <- p + v, for weights and biases.
/// Throws NumericError if any gradient is non-finite.
template <typename T>
void apply_momentum_update(ParameterStore<T>& params, const Gradients<T>& grads,
                           double learning_rate, double momentum);

/// Forward/backward on one batch followed by the momentum update.
template <typename T>
BatchLoss sgd_step(Network<T>& net, TrainState<T>& state, const Tensor<T>& batch,
                   std::span<const std::uint16_t> labels, const TrainConfig& config);

struct EvalResult {
  double loss = 0.0;
  std::size_t errors = 0;
  std::size_t count = 0;
};

/// Eval-mode mean loss and number of misclassified samples.
template <typename T>
EvalResult evaluate(Network<T>& net, const ParameterStore<T>& params, const Dataset& data,
                    std::size_t batch_size = 500);

/// Labels attached to the rows an epoch loop produces.
struct Lineage {
  std::string run_id;
  Phase phase = Phase::finetune;
  int submodel = kFullModel;
  /// Cumulative seconds already spent before the first epoch.
  double start_seconds = 0.0;
};

/// Runs `epochs` epochs: seeded shuffle, full pass in batches (the last one
/// may be short), then evaluation on `eval` when given. One row per epoch.
template <typename T>
std::vector<MetricsRow> train_epochs(Network<T>& net, TrainState<T>& state,
                                     const Dataset& train, const Dataset* eval,
                                     const TrainConfig& config, std::size_t epochs,
                                     const Lineage& lineage);

/// Seeds of the K sub-models: derive_seed(master_seed, i).
std::vector<std::uint64_t> submodel_seeds(const TrainConfig& config);

template <typename T>
struct PretrainResult {
  std::vector<TrainState<T>> states;
  std::vector<MetricsRow> metrics;
  double seconds = 0.0;
};

/// Phase one: trains every sub-model of `plan` independently for
/// config.pretrain_epochs, concurrently when config.parallel is set.
template <typename T>
PretrainResult<T> pretrain(const PartitionPlan& plan, const TrainConfig& config,
                           std::span<const std::uint64_t> seeds, const Dataset& train,
                           const Dataset* eval, const std::string& run_id);

struct PairStats {
  std::size_t first = 0;
  std::size_t second = 0;
  double pearson = 0.0;
  double mean_abs_diff = 0.0;
  double disagreement = 0.0;
};

/// Probability each model assigns to the correct class, per sample.
struct DiversityReport {
  std::size_t samples = 0;
  std::size_t models = 0;
  /// Row-major [samples, models].
  std::vector<double> correct_prob;
  /// Row-major [samples, models] argmax predictions.
  std::vector<std::size_t> predictions;
  std::vector<PairStats> pairs;

  double prob(std::size_t sample, std::size_t model) const {
    return correct_prob[sample * models + model];
  }
};

/// Pairwise statistics for every model pair from the two matrices. Pearson
/// correlation is 1 for identical columns and 0 when exactly one column is
/// constant.
DiversityReport make_diversity_report(std::size_t samples, std::size_t models,
                                      std::vector<double> correct_prob,
                                      std::vector<std::size_t> predictions);

template <typename T>
DiversityReport diversity_report(std::span<const Model<T>> models, const Dataset& data);

template <typename T>
struct PipelineResult {
  NetworkSpec spec;
  ParameterStore<T> final_params;
  std::optional<PartitionPlan> plan;
  /// Sub-model parameters just before merging.
  std::vector<ParameterStore<T>> submodels;
  /// Full-model parameters right after merging.
  std::optional<ParameterStore<T>> merged;
  std::vector<MetricsRow> metrics;
  double pretrain_seconds = 0.0;
  /// Filled when K > 1 and an evaluation set was given.
  std::optional<DiversityReport> diversity;
  std::optional<double> merge_deviation;
  std::optional<std::size_t> merged_errors_at_merge;
  std::optional<std::size_t> ensemble_errors_at_merge;
  /// Evaluation of final_params; equals the last metrics row when epochs ran.
  std::optional<EvalResult> final_eval;
};

/// Partition, independent pre-training, merge and fine-tuning. K = 1 is the
/// baseline: one full model trained for pretrain + finetune epochs.
/// Partition errors are raised before any training starts.
template <typename T>
PipelineResult<T> run_pipeline(const NetworkSpec& spec, const TrainConfig& config,
                               const Dataset& train, const Dataset* eval,
                               const std::string& run_id = "run");

}  // namespace partrain
