#include "partrain/cli/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "partrain/checkpoint.hpp"
#include "partrain/cli/metrics_io.hpp"
#include "partrain/errors.hpp"
#include "partrain/partition.hpp"
#include "partrain/spec_format.hpp"

namespace partrain::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void check_keys(const json& obj, std::string_view where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

template <typename V>
void read(const json& obj, const char* key, V& into, std::string_view where) {
  if (!obj.contains(key)) return;
  try {
    into = obj.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(where) + "." + key + " has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw ConfigError("file not found: " + p.string());
}

DatasetConfig parse_dataset(const json& j, const fs::path& base) {
  check_keys(j, "dataset",
             {"kind", "dir", "train_images", "train_labels", "test_images", "test_labels",
              "train_batches", "test_batches", "per_class", "test_per_class", "classes", "shape",
              "separation", "seed", "validation", "split_seed", "eval"});
  DatasetConfig d;
  read(j, "kind", d.kind, "dataset");
  read(j, "validation", d.validation, "dataset");
  read(j, "split_seed", d.split_seed, "dataset");
  read(j, "eval", d.eval, "dataset");
  if (d.eval != "test" && d.eval != "validation") {
    throw ConfigError("dataset.eval must be \"test\" or \"validation\"");
  }
  if (d.eval == "validation" && d.validation == 0) {
    throw ConfigError("dataset.eval is \"validation\" but dataset.validation is 0");
  }
  std::string dir;
  read(j, "dir", dir, "dataset");

  if (d.kind == "mnist") {
    std::string ti = "train-images-idx3-ubyte", tl = "train-labels-idx1-ubyte",
                si = "t10k-images-idx3-ubyte", sl = "t10k-labels-idx1-ubyte";
    read(j, "train_images", ti, "dataset");
    read(j, "train_labels", tl, "dataset");
    read(j, "test_images", si, "dataset");
    read(j, "test_labels", sl, "dataset");
    const fs::path root = resolve(base, dir);
    d.train_images = resolve(root, ti);
    d.train_labels = resolve(root, tl);
    d.test_images = resolve(root, si);
    d.test_labels = resolve(root, sl);
    for (const auto& p : {d.train_images, d.train_labels, d.test_images, d.test_labels}) {
      require_file(p);
    }
  } else if (d.kind == "cifar10") {
    std::vector<std::string> train{"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                                   "data_batch_4.bin", "data_batch_5.bin"};
    std::vector<std::string> test{"test_batch.bin"};
    read(j, "train_batches", train, "dataset");
    read(j, "test_batches", test, "dataset");
    const fs::path root = resolve(base, dir);
    for (const auto& p : train) d.train_batches.push_back(resolve(root, p));
    for (const auto& p : test) d.test_batches.push_back(resolve(root, p));
    for (const auto& p : d.train_batches) require_file(p);
    for (const auto& p : d.test_batches) require_file(p);
  } else if (d.kind == "synthetic") {
    read(j, "per_class", d.per_class, "dataset");
    read(j, "test_per_class", d.test_per_class, "dataset");
    read(j, "classes", d.classes, "dataset");
    read(j, "separation", d.separation, "dataset");
    read(j, "seed", d.seed, "dataset");
    d.shape = Shape3{1, 1, d.classes};
    if (j.contains("shape")) {
      std::vector<std::size_t> s;
      read(j, "shape", s, "dataset");
      if (s.size() != 3) throw ConfigError("dataset.shape must be [height, width, channels]");
      d.shape = Shape3{s[0], s[1], s[2]};
    }
    if (d.classes < 2 || d.shape.size() < d.classes) {
      throw ConfigError("synthetic data needs 2 <= classes <= height*width*channels");
    }
    if (d.per_class == 0) throw ConfigError("dataset.per_class must be >= 1");
  } else {
    throw ConfigError("dataset.kind must be mnist, cifar10 or synthetic, got '" + d.kind + "'");
  }
  return d;
}

TrainConfig parse_train(const json& j) {
  check_keys(j, "train",
             {"learning_rate", "momentum", "batch_size", "pretrain_epochs", "finetune_epochs",
              "master_seed", "precision", "parallel", "threads"});
  TrainConfig c;
  read(j, "learning_rate", c.learning_rate, "train");
  read(j, "momentum", c.momentum, "train");
  read(j, "batch_size", c.batch_size, "train");
  read(j, "pretrain_epochs", c.pretrain_epochs, "train");
  read(j, "finetune_epochs", c.finetune_epochs, "train");
  read(j, "master_seed", c.master_seed, "train");
  read(j, "precision", c.precision, "train");
  read(j, "parallel", c.parallel, "train");
  read(j, "threads", c.max_threads, "train");
  c.validate();
  return c;
}

struct Group {
  std::size_t k = 1;
  std::optional<std::size_t> merge_epoch;
  std::size_t pretrain = 0;
  std::size_t finetune = 0;
  std::string id;
};

std::vector<Group> groups_of(const ExperimentConfig& c) {
  std::vector<Group> out;
  const std::size_t total =
      c.total_epochs.value_or(c.train.pretrain_epochs + c.train.finetune_epochs);
  for (std::size_t k : c.ks) {
    if (k == 1) {
      out.push_back({1, std::nullopt, 0, total, "k1"});
    } else if (c.merge_epochs.empty()) {
      out.push_back({k, std::nullopt, c.train.pretrain_epochs, c.train.finetune_epochs,
                     "k" + std::to_string(k)});
    } else {
      for (std::size_t m : c.merge_epochs) {
        out.push_back({k, m, m, total - m, "k" + std::to_string(k) + "-m" + std::to_string(m)});
      }
    }
  }
  return out;
}

struct RunRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  std::vector<MetricsRow> metrics;
  std::optional<EvalResult> final_eval;
  std::optional<double> merge_deviation;
  std::optional<std::size_t> merged_errors;
  std::optional<std::size_t> ensemble_errors;
  double pretrain_seconds = 0.0;
  std::optional<DiversityReport> diversity;
};

template <typename T>
RunRecord run_one(const NetworkSpec& spec, const TrainConfig& train_config, const LoadedData& data,
                  const std::string& run_id, const fs::path& ckpt_dir, bool checkpoints) {
  const Dataset* eval = data.eval.size() > 0 ? &data.eval : nullptr;
  PipelineResult<T> r = run_pipeline<T>(spec, train_config, data.train, eval, run_id);
  RunRecord rec;
  rec.run_id = run_id;
  rec.seed = train_config.master_seed;
  rec.metrics = std::move(r.metrics);
  rec.final_eval = r.final_eval;
  rec.merge_deviation = r.merge_deviation;
  rec.merged_errors = r.merged_errors_at_merge;
  rec.ensemble_errors = r.ensemble_errors_at_merge;
  rec.pretrain_seconds = r.pretrain_seconds;
  rec.diversity = std::move(r.diversity);
  if (checkpoints) {
    fs::create_directories(ckpt_dir);
    const std::uint64_t master = train_config.master_seed;
    if (r.plan) {
      const std::vector<std::uint64_t> seeds = submodel_seeds(train_config);
      for (std::size_t i = 0; i < r.submodels.size(); ++i) {
        write_checkpoint(ckpt_dir / (run_id + "-sub" + std::to_string(i) + ".ckpt"),
                         r.plan->sub_specs[i], r.submodels[i],
                         {"submodel " + std::to_string(i) + " at merge", {master, seeds[i]}});
      }
      write_checkpoint(ckpt_dir / (run_id + "-merged.ckpt"), spec, *r.merged,
                       {"merged", {master}});
    }
    write_checkpoint(ckpt_dir / (run_id + "-final.ckpt"), spec, r.final_params,
                     {"final", {master}});
  }
  return rec;
}

json optional_json(const auto& v) { return v ? json(*v) : json(nullptr); }

json stats_json(const Stats& s) { return {{"mean", s.mean}, {"stddev", s.stddev}, {"n", s.n}}; }

double rounded_percent(std::size_t part, std::size_t whole) {
  return std::round(10000.0 * static_cast<double>(part) / static_cast<double>(whole)) / 100.0;
}

}  // namespace

ExperimentConfig parse_experiment_config(std::string_view text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"dataset", "spec_file", "spec", "train", "k", "merge_epochs", "total_epochs",
              "repetitions", "out", "duplicate_lrn", "checkpoints"});
  ExperimentConfig c;
  if (!j.contains("dataset")) throw ConfigError("config needs a dataset");
  c.dataset = parse_dataset(j.at("dataset"), base_dir);

  if (j.contains("spec_file") == j.contains("spec")) {
    throw ConfigError("config needs exactly one of spec_file and spec");
  }
  if (j.contains("spec_file")) {
    std::string p;
    read(j, "spec_file", p, "config");
    const fs::path path = resolve(base_dir, p);
    require_file(path);
    c.spec = load_spec_file(path);
  } else {
    const json& s = j.at("spec");
    std::string text_spec;
    if (s.is_string()) {
      text_spec = s.get<std::string>();
    } else if (s.is_array()) {
      for (const auto& line : s) {
        if (!line.is_string()) throw ConfigError("config.spec lines must be strings");
        text_spec += line.get<std::string>() + "\n";
      }
    } else {
      throw ConfigError("config.spec must be a string or a list of lines");
    }
    c.spec = parse_spec(text_spec);
  }

  if (j.contains("train")) c.train = parse_train(j.at("train"));
  read(j, "k", c.ks, "config");
  read(j, "merge_epochs", c.merge_epochs, "config");
  if (j.contains("total_epochs")) {
    std::size_t t = 0;
    read(j, "total_epochs", t, "config");
    c.total_epochs = t;
  }
  read(j, "repetitions", c.repetitions, "config");
  read(j, "duplicate_lrn", c.duplicate_lrn, "config");
  read(j, "checkpoints", c.checkpoints, "config");
  std::string out = "out";
  read(j, "out", out, "config");
  c.out = resolve(base_dir, out);

  if (c.ks.empty()) throw ConfigError("config.k must list at least one K");
  for (std::size_t k : c.ks) {
    if (k == 0) throw ConfigError("config.k entries must be >= 1");
  }
  if (c.repetitions == 0) throw ConfigError("config.repetitions must be >= 1");
  if (!c.merge_epochs.empty()) {
    if (!c.total_epochs) throw ConfigError("config.merge_epochs needs total_epochs");
    for (std::size_t m : c.merge_epochs) {
      if (m > *c.total_epochs) throw ConfigError("merge epoch exceeds total_epochs");
    }
  }
  if (c.dataset.kind == "synthetic") {
    if (!(c.dataset.shape == c.spec.input()) || c.dataset.classes != c.spec.classes()) {
      throw ConfigError("synthetic dataset shape or class count does not fit the spec");
    }
  }
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("config not found: " + path.string());
  return parse_experiment_config(read_text_file(path), path.parent_path());
}

LoadedData load_data(const DatasetConfig& d) {
  Dataset train, test;
  if (d.kind == "mnist") {
    train = load_mnist_idx(d.train_images, d.train_labels);
    test = load_mnist_idx(d.test_images, d.test_labels);
  } else if (d.kind == "cifar10") {
    train = load_cifar10_bin(d.train_batches);
    test = load_cifar10_bin(d.test_batches);
  } else {
    train = synth_blobs(d.per_class, d.classes, d.shape, d.seed, d.separation);
    test = synth_blobs(d.test_per_class, d.classes, d.shape, d.seed + 1, d.separation);
  }
  LoadedData out;
  if (d.validation > 0) {
    if (d.validation >= train.size()) throw ConfigError("validation split leaves no training data");
    DatasetSplits s = split_dataset(train, d.validation, 0, d.split_seed);
    out.train = std::move(s.train);
    out.eval = d.eval == "validation" ? std::move(s.validation) : std::move(test);
  } else {
    out.train = std::move(train);
    out.eval = std::move(test);
  }
  return out;
}

NetworkSpec spec_for_k(const ExperimentConfig& config, std::size_t k) {
  if (k > 1 && config.duplicate_lrn) return duplicate_lrn(config.spec, k);
  return config.spec;
}

Stats summarize(const std::vector<double>& values) {
  Stats s;
  s.n = values.size();
  if (s.n == 0) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

void run_experiment(const ExperimentConfig& config, std::ostream* log) {
  const std::vector<Group> groups = groups_of(config);
  // Partition problems surface before any data is loaded or trained.
  std::vector<NetworkSpec> specs;
  std::vector<std::optional<PartitionPlan>> plans;
  for (const Group& g : groups) {
    specs.push_back(spec_for_k(config, g.k));
    plans.push_back(g.k > 1 ? std::optional(partition(specs.back(), g.k)) : std::nullopt);
  }

  const LoadedData data = load_data(config.dataset);
  fs::create_directories(config.out);
  const fs::path ckpt_dir = config.out / "checkpoints";

  std::ofstream metrics_out(config.out / "metrics.csv", std::ios::trunc);
  if (!metrics_out) throw ConfigError("cannot write into " + config.out.string());
  metrics_out << kMetricsHeader << '\n';
  std::ofstream diversity_out;
  if (std::any_of(groups.begin(), groups.end(), [](const Group& g) { return g.k > 1; })) {
    diversity_out.open(config.out / "diversity.csv", std::ios::trunc);
    if (!diversity_out) throw ConfigError("cannot write into " + config.out.string());
    diversity_out << kDiversityHeader << '\n';
  }

  const NetworkSpec& full = config.spec;
  const std::size_t full_params = count_params(full);
  json summary;
  summary["spec"] = {{"name", full.name()},
                     {"hash", hex64(spec_hash(full))},
                     {"params", full_params},
                     {"macs_per_sample", estimate_flops(full, 1)}};
  summary["dataset"] = {{"kind", config.dataset.kind},
                        {"train_size", data.train.size()},
                        {"eval_split", config.dataset.eval},
                        {"eval_size", data.eval.size()}};
  summary["train"] = {{"learning_rate", config.train.learning_rate},
                      {"momentum", config.train.momentum},
                      {"batch_size", config.train.batch_size},
                      {"precision", config.train.precision},
                      {"parallel", config.train.parallel},
                      {"threads", config.train.max_threads},
                      {"master_seed", config.train.master_seed},
                      {"repetitions", config.repetitions}};
  json configurations = json::array();

  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& g = groups[gi];
    const NetworkSpec& spec = specs[gi];
    const NetworkSpec& sub = plans[gi] ? plans[gi]->sub_specs.front() : spec;
    const ParamClassBreakdown classes = classify_params(sub);

    json entry;
    entry["id"] = g.id;
    entry["k"] = g.k;
    entry["merge_epoch"] = optional_json(g.merge_epoch);
    entry["pretrain_epochs"] = g.pretrain;
    entry["finetune_epochs"] = g.finetune;
    entry["params"] = count_params(spec);
    entry["submodel_params"] = count_params(sub);
    entry["submodel_percent"] = rounded_percent(count_params(sub), full_params);
    entry["submodel_macs_per_sample"] = estimate_flops(sub, 1);
    entry["param_classes"] = {{"constant", classes.constant_count},
                              {"linear", classes.linear_count},
                              {"quadratic", classes.quadratic_count}};
    json runs = json::array();
    std::vector<double> errors, error_percent;

    for (std::size_t rep = 0; rep < config.repetitions; ++rep) {
      TrainConfig tc = config.train;
      tc.k = g.k;
      tc.pretrain_epochs = g.pretrain;
      tc.finetune_epochs = g.finetune;
      tc.master_seed = repetition_seed(config.train.master_seed, rep);
      const std::string run_id = g.id + "-r" + std::to_string(rep);
      RunRecord rec = tc.precision == 64
                          ? run_one<double>(spec, tc, data, run_id, ckpt_dir, config.checkpoints)
                          : run_one<float>(spec, tc, data, run_id, ckpt_dir, config.checkpoints);

      write_metrics(metrics_out, rec.metrics, false);
      metrics_out.flush();
      if (rec.diversity) {
        const DiversityReport& d = *rec.diversity;
        for (std::size_t s = 0; s < d.samples; ++s) {
          for (std::size_t m = 0; m < d.models; ++m) {
            diversity_out << csv_escape(run_id) << ',' << s << ',' << data.eval.labels[s] << ','
                          << m << ',' << format_double(d.prob(s, m)) << ','
                          << d.predictions[s * d.models + m] << '\n';
          }
        }
        diversity_out.flush();
      }

      json run;
      run["run_id"] = run_id;
      run["master_seed"] = rec.seed;
      run["pretrain_seconds"] = rec.pretrain_seconds;
      run["merge_deviation"] = optional_json(rec.merge_deviation);
      run["merged_errors_at_merge"] = optional_json(rec.merged_errors);
      run["ensemble_errors_at_merge"] = optional_json(rec.ensemble_errors);
      if (rec.final_eval) {
        run["final_errors"] = rec.final_eval->errors;
        run["final_eval_loss"] = rec.final_eval->loss;
        errors.push_back(static_cast<double>(rec.final_eval->errors));
        error_percent.push_back(100.0 * static_cast<double>(rec.final_eval->errors) /
                                static_cast<double>(rec.final_eval->count));
      } else {
        run["final_errors"] = nullptr;
        run["final_eval_loss"] = nullptr;
      }
      if (rec.diversity) {
        json pairs = json::array();
        for (const PairStats& p : rec.diversity->pairs) {
          pairs.push_back({{"first", p.first},
                           {"second", p.second},
                           {"pearson", p.pearson},
                           {"mean_abs_diff", p.mean_abs_diff},
                           {"disagreement", p.disagreement}});
        }
        run["diversity"] = std::move(pairs);
      }
      runs.push_back(std::move(run));

      if (log != nullptr) {
        *log << run_id << ": ";
        if (rec.final_eval) {
          *log << rec.final_eval->errors << '/' << rec.final_eval->count << " errors";
        } else {
          *log << "no evaluation set";
        }
        if (!rec.metrics.empty()) *log << ", " << rec.metrics.back().cumulative_seconds << " s";
        *log << '\n';
      }
    }
    entry["runs"] = std::move(runs);
    entry["final_errors"] = stats_json(summarize(errors));
    entry["final_error_percent"] = stats_json(summarize(error_percent));
    configurations.push_back(std::move(entry));
  }
  summary["configurations"] = std::move(configurations);

  std::ofstream summary_out(config.out / "summary.json", std::ios::trunc);
  if (!summary_out) throw ConfigError("cannot write into " + config.out.string());
  summary_out << summary.dump(2) << '\n';
}

}  // namespace partrain::cli
