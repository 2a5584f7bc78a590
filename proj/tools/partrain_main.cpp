#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "partrain/cli/commands.hpp"
#include "partrain/cli/experiment.hpp"
#include "partrain/errors.hpp"
#include "partrain/spec_format.hpp"

namespace fs = std::filesystem;
using namespace partrain;

namespace {

constexpr int kOk = 0;
constexpr int kRunError = 1;
constexpr int kConfigError = 2;

// count/verify take the network from --spec or from the spec of --config.
NetworkSpec network_from(const std::string& spec_file, const std::string& config_file) {
  if (!spec_file.empty() && !config_file.empty()) {
    throw ConfigError("give either --spec or --config, not both");
  }
  if (!spec_file.empty()) return load_spec_file(spec_file);
  if (!config_file.empty()) return cli::load_experiment_config(config_file).spec;
  throw ConfigError("a network is required: pass --spec FILE or --config FILE");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partitioned training of neural networks: train K sub-models, merge, fine-tune"};
  app.require_subcommand(1);

  std::string config_file, spec_file, out_dir, plan_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<int> precision;
  std::vector<std::size_t> ks;
  std::size_t verify_k = 2;

  auto* run = app.add_subcommand("run", "Run an experiment described by a JSON config");
  run->add_option("--config", config_file, "Experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory (overrides the config)");
  run->add_option("--seed", seed, "Master seed (overrides the config)");
  run->add_option("--threads", threads, "Phase-one parallelism cap; 1 trains sub-models serially");
  run->add_option("--precision", precision, "32 or 64")->check(CLI::IsMember({32, 64}));

  auto* count = app.add_subcommand("count", "Print parameter counts and MACs per K");
  count->add_option("--spec", spec_file, "Network spec file");
  count->add_option("--config", config_file, "Take the network from this experiment config");
  count->add_option("--k", ks, "Values of K")->delimiter(',')->default_str("1,2,5,10");

  auto* verify = app.add_subcommand("verify", "Check plan, merge equivalence and gradients");
  verify->add_option("--spec", spec_file, "Network spec file");
  verify->add_option("--config", config_file, "Take the network from this experiment config");
  verify->add_option("--k", verify_k, "Number of sub-models")->default_val(2);
  verify->add_option("--seed", seed, "Seed of the random sub-models");
  verify->add_option("--precision", precision, "32 or 64")->check(CLI::IsMember({32, 64}));
  verify->add_option("--plan", plan_file, "Plan file to verify instead of the default split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) {
      cli::ExperimentConfig config = cli::load_experiment_config(config_file);
      if (!out_dir.empty()) config.out = out_dir;
      if (seed) config.train.master_seed = *seed;
      if (precision) config.train.precision = *precision;
      if (threads) {
        config.train.parallel = *threads != 1;
        config.train.max_threads = *threads;
      }
      config.train.validate();
      cli::run_experiment(config, &std::cerr);
      std::cout << "wrote " << (config.out / "metrics.csv").string() << " and "
                << (config.out / "summary.json").string() << '\n';
      return kOk;
    }
    if (*count) {
      if (ks.empty()) ks = {1, 2, 5, 10};
      const NetworkSpec spec = network_from(spec_file, config_file);
      std::cout << format_count_table(cli::count_rows(spec, ks));
      return kOk;
    }
    if (*verify) {
      const NetworkSpec spec = network_from(spec_file, config_file);
      cli::VerifyOptions options;
      options.k = verify_k;
      if (seed) options.seed = *seed;
      options.precision = precision.value_or(64);
      if (!plan_file.empty()) options.plan_file = fs::path(plan_file);
      const cli::VerifyReport report = cli::run_verify(spec, options);
      std::cout << cli::format_verify_report(report);
      return report.pass() ? kOk : kRunError;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const SpecError& e) {
    std::cerr << "spec error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRunError;
  }
  return kOk;
}
