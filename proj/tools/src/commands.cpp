#include "partrain/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "partrain/errors.hpp"
#include "partrain/merge.hpp"
#include "partrain/network.hpp"
#include "partrain/partition.hpp"
#include "partrain/spec_format.hpp"

namespace partrain::cli {
namespace {

bool needs_duplication(const NetworkSpec& spec) {
  for (const Violation& v : validate_partitionable(spec)) {
    if (v.message.find("duplication") != std::string::npos) return true;
  }
  return false;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

template <typename T>
void randomize(Tensor<T>& t, Rng& rng, double scale) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-scale, scale));
}

template <typename T>
ParameterStore<T> random_store(const NetworkSpec& spec, Rng& rng) {
  ParameterStore<T> p = ParameterStore<T>::glorot(spec, rng);
  for (ParamBlock<T>& b : p.blocks()) {
    randomize(b.bias, rng, 0.1);
    randomize(b.weight_momentum, rng, 0.01);
    randomize(b.bias_momentum, rng, 0.01);
  }
  return p;
}

template <typename T>
Tensor<T> random_batch(const NetworkSpec& spec, std::size_t n, Rng& rng) {
  const Shape3 s = spec.input();
  Tensor<T> x({n, s.height, s.width, s.channels});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(rng.uniform());
  return x;
}

template <typename T>
double merge_deviation(const PartitionPlan& plan, std::uint64_t seed, std::size_t probe) {
  std::vector<ParameterStore<T>> subs;
  for (std::size_t i = 0; i < plan.k; ++i) {
    Rng rng(derive_seed(seed, i));
    subs.push_back(random_store<T>(plan.sub_specs[i], rng));
  }
  Rng probe_rng(derive_seed(seed, plan.k));
  const Tensor<T> x = random_batch<T>(plan.spec, probe, probe_rng);
  return merged_equals_ensemble_check<T>(plan, subs, x);
}

struct GradientResult {
  double max_error = 0.0;
  std::size_t probed = 0;
  std::string worst;
};

GradientResult gradient_check(const NetworkSpec& spec, std::uint64_t seed, std::size_t coords) {
  Rng rng(seed);
  ParameterStore<double> params = random_store<double>(spec, rng);
  const std::size_t n = 2;
  const Tensor<double> x = random_batch<double>(spec, n, rng);
  std::vector<std::uint16_t> labels(n);
  for (auto& l : labels) l = static_cast<std::uint16_t>(rng.below(spec.classes()));

  Network<double> net(spec);
  const Rng dropout_stream(derive_seed(seed, 0x9e3779b9ULL));
  Gradients<double> grads;
  Rng r0 = dropout_stream;
  net.train_batch(params, x, labels, r0, grads);

  GradientResult out;
  const auto probe = [&](Tensor<double>& p, const Tensor<double>& g, const std::string& what) {
    for (std::size_t c = 0; c < std::min(coords, p.size()); ++c) {
      const std::size_t i = rng.below(p.size());
      const double saved = p[i];
      p[i] = saved + kGradientStep;
      Rng r1 = dropout_stream;
      const double up = net.loss(params, x, labels, Mode::train, r1);
      p[i] = saved - kGradientStep;
      Rng r2 = dropout_stream;
      const double down = net.loss(params, x, labels, Mode::train, r2);
      p[i] = saved;
      const double numeric = (up - down) / (2 * kGradientStep);
      const double err =
          std::abs(g[i] - numeric) / std::max({std::abs(g[i]), std::abs(numeric), 1e-6});
      ++out.probed;
      if (err > out.max_error) {
        out.max_error = err;
        out.worst = what + "[" + std::to_string(i) + "]";
      }
    }
  };
  for (std::size_t b = 0; b < params.size(); ++b) {
    const std::string where = "block " + std::to_string(b);
    probe(params.block(b).weights, grads.weights[b], where + " weights");
    probe(params.block(b).bias, grads.bias[b], where + " bias");
  }
  return out;
}

}  // namespace

std::vector<CountRow> count_rows(const NetworkSpec& spec, const std::vector<std::size_t>& ks) {
  std::vector<CountRow> rows;
  const std::size_t full = count_params(spec);
  for (std::size_t k : ks) {
    if (k == 0) throw ConfigError("K must be >= 1");
    CountRow row;
    row.k = k;
    row.full_params = full;
    if (k == 1) {
      row.params = full;
      row.macs = estimate_flops(spec, 1);
      row.classes = classify_params(spec);
    } else {
      const NetworkSpec split = needs_duplication(spec) ? duplicate_lrn(spec, k) : spec;
      const PartitionPlan plan = partition(split, k);
      const NetworkSpec& sub = plan.sub_specs.front();
      row.params = count_params(sub);
      row.macs = estimate_flops(sub, 1);
      row.classes = classify_params(sub);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string percent_label(const CountRow& row) {
  if (row.k == 1) return "100%";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%",
                100.0 * static_cast<double>(row.params) / static_cast<double>(row.full_params));
  return buf;
}

std::string format_count_table(const std::vector<CountRow>& rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-4s %-20s %14s %10s %10s %12s\n", "K", "params", "MACs",
                "constant", "linear", "quadratic");
  os << line;
  for (const CountRow& r : rows) {
    const std::string params = std::to_string(r.params) + " (" + percent_label(r) + ")";
    std::snprintf(line, sizeof line, "%-4zu %-20s %14llu %10zu %10zu %12zu\n", r.k,
                  params.c_str(), static_cast<unsigned long long>(r.macs),
                  r.classes.constant_count, r.classes.linear_count, r.classes.quadratic_count);
    os << line;
  }
  return os.str();
}

bool VerifyReport::pass() const {
  return !checks.empty() &&
         std::all_of(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.pass; });
}

double merge_tolerance(int precision) { return precision == 64 ? 1e-12 : 1e-5; }

VerifyReport run_verify(const NetworkSpec& spec, const VerifyOptions& options) {
  VerifyReport report;
  const auto add = [&](std::string name, bool pass, std::string detail) {
    report.checks.push_back({std::move(name), pass, std::move(detail)});
  };
  if (options.k == 0) {
    add("partitionable", false, "K must be >= 1");
    return report;
  }
  if (options.precision != 32 && options.precision != 64) {
    add("precision", false, "precision must be 32 or 64");
    return report;
  }

  NetworkSpec target = spec;
  std::string note;
  if (options.k > 1 && needs_duplication(spec)) {
    target = duplicate_lrn(spec, options.k);
    note = "normalization duplicated; ";
  }
  const std::vector<Violation> blockers = validate_partitionable(target, options.k);
  if (!blockers.empty()) {
    std::string detail;
    for (const Violation& v : blockers) detail += (detail.empty() ? "" : "; ") + to_string(v);
    add("partitionable", false, detail);
    return report;
  }
  add("partitionable", true, note + "K=" + std::to_string(options.k));

  std::optional<PartitionPlan> plan;
  try {
    plan = options.plan_file ? load_plan_file(*options.plan_file, target)
                             : partition(target, options.k);
  } catch (const Error& e) {
    add("plan", false, e.what());
  }
  if (plan) {
    const std::vector<Violation> v = verify_plan(*plan, target);
    if (v.empty()) {
      add("plan", true, std::to_string(plan->k) + " sub-models, " +
                            std::to_string(plan->assignments.size()) + " hidden layers");
    } else {
      std::string detail;
      for (const Violation& x : v) detail += (detail.empty() ? "" : "; ") + to_string(x);
      add("plan", false, detail);
      plan.reset();
    }
  }

  if (plan) {
    try {
      const double dev = options.precision == 64
                             ? merge_deviation<double>(*plan, options.seed, options.probe_samples)
                             : merge_deviation<float>(*plan, options.seed, options.probe_samples);
      const double tol = merge_tolerance(options.precision);
      report.merge_deviation = dev;
      add("merge", dev < tol,
          "max softmax deviation " + sci(dev) + " (" + std::to_string(options.precision) +
              "-bit, tolerance " + sci(tol) + ")");
    } catch (const Error& e) {
      add("merge", false, e.what());
    }
  }

  try {
    const GradientResult g = gradient_check(target, options.seed, options.gradient_coordinates);
    report.max_gradient_error = g.max_error;
    std::string detail = std::to_string(g.probed) + " coordinates, max relative error " +
                         sci(g.max_error) + " (tolerance " + sci(kGradientTolerance) + ")";
    if (!g.worst.empty()) detail += ", worst " + g.worst;
    add("gradients", g.max_error < kGradientTolerance, detail);
  } catch (const Error& e) {
    add("gradients", false, e.what());
  }
  return report;
}

std::string format_verify_report(const VerifyReport& report) {
  std::ostringstream os;
  for (const VerifyCheck& c : report.checks) {
    os << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
  }
  os << (report.pass() ? "verify: pass" : "verify: fail") << '\n';
  return os.str();
}

}  // namespace partrain::cli
