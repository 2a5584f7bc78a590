#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "partrain/dataio.hpp"
#include "partrain/netspec.hpp"
#include "partrain/trainer.hpp"

namespace partrain::cli {

struct DatasetConfig {
  /// "mnist", "cifar10" or "synthetic".
  std::string kind = "synthetic";
  // mnist
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  // cifar10
  std::vector<std::filesystem::path> train_batches;
  std::vector<std::filesystem::path> test_batches;
  // synthetic
  std::size_t per_class = 100;
  std::size_t test_per_class = 50;
  std::size_t classes = 2;
  Shape3 shape{1, 1, 2};
  double separation = 6.0;
  std::uint64_t seed = 7;
  /// Samples moved from train to a seeded validation split.
  std::size_t validation = 0;
  std::uint64_t split_seed = 1;
  /// Which split the per-epoch evaluation uses: "test" or "validation".
  std::string eval = "test";
};

struct ExperimentConfig {
  DatasetConfig dataset;
  NetworkSpec spec = lenet_spec();
  TrainConfig train;
  std::vector<std::size_t> ks{1};
  /// When non-empty, each K > 1 runs once per merge epoch m with
  /// pretrain_epochs = m and finetune_epochs = total_epochs - m.
  std::vector<std::size_t> merge_epochs;
  std::optional<std::size_t> total_epochs;
  std::size_t repetitions = 1;
  std::filesystem::path out = "out";
  /// Apply duplicate_lrn before partitioning when K > 1.
  bool duplicate_lrn = false;
  bool checkpoints = true;
};

/// Parses the JSON config; relative paths resolve against `base_dir`.
/// Throws ConfigError (or SpecError for an invalid spec).
ExperimentConfig parse_experiment_config(std::string_view json_text,
                                         const std::filesystem::path& base_dir);

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct LoadedData {
  Dataset train;
  Dataset eval;
};

/// Loads the configured dataset and applies the validation split.
LoadedData load_data(const DatasetConfig& config);

/// Spec actually trained for a given K: duplicate_lrn applied when requested.
NetworkSpec spec_for_k(const ExperimentConfig& config, std::size_t k);

struct Stats {
  double mean = 0.0;
  /// Sample standard deviation (n - 1); 0 for a single value.
  double stddev = 0.0;
  std::size_t n = 0;
};

Stats summarize(const std::vector<double>& values);

/// Runs every (K, merge epoch, repetition) and writes metrics.csv,
/// summary.json, diversity.csv and checkpoints into config.out. Progress goes
/// to `log` when non-null.
void run_experiment(const ExperimentConfig& config, std::ostream* log);

}  // namespace partrain::cli
