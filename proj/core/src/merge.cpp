#include "partrain/merge.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "partrain/layers.hpp"
#include "partrain/network.hpp"

namespace partrain {
namespace {

// Geometry shared by a full block and its sub-model slices: weights are laid
// out as [positions, in_units, out_units] with positions = kernel area.
struct BlockGeometry {
  std::size_t positions;
  std::size_t in_units;
  std::size_t out_units;
};

BlockGeometry geometry(const ResolvedLayer& layer) {
  std::size_t positions = 1;
  if (const auto* c = std::get_if<layer::Conv2D>(&layer.kind)) {
    positions = c->kernel_h * c->kernel_w;
  }
  return {positions, input_units(layer), output_units(layer)};
}

void check_map(const BlockMap& m, const BlockGeometry& full, std::size_t sub, std::size_t block) {
  const auto bad = [&](std::size_t v, std::size_t limit) { return v >= limit; };
  if (std::any_of(m.in_index.begin(), m.in_index.end(),
                  [&](std::size_t v) { return bad(v, full.in_units); }) ||
      std::any_of(m.out_index.begin(), m.out_index.end(),
                  [&](std::size_t v) { return bad(v, full.out_units); })) {
    throw MergeError("sub-model " + std::to_string(sub) + " block " + std::to_string(block) +
                     ": index map points outside the full model");
  }
}

}  // namespace

template <typename T>
ParameterStore<T> merge(const PartitionPlan& plan, std::span<const ParameterStore<T>> sub_params) {
  if (sub_params.size() != plan.k) {
    throw MergeError("merge got " + std::to_string(sub_params.size()) +
                     " sub-models for a plan with K=" + std::to_string(plan.k));
  }
  for (std::size_t j = 0; j < plan.k; ++j) {
    try {
      sub_params[j].require_matches(plan.sub_specs[j], "sub-model");
    } catch (const ShapeError& e) {
      throw MergeError("sub-model " + std::to_string(j) + ": " + e.what());
    }
  }

  const NetworkSpec& spec = plan.spec;
  ParameterStore<T> full = ParameterStore<T>::zeros(spec);
  const T k = static_cast<T>(plan.k);

  for (std::size_t b = 0; b < full.size(); ++b) {
    const BlockGeometry g = geometry(spec.layer(spec.param_layers()[b]));
    ParamBlock<T>& dst = full.block(b);
    const bool is_output = b + 1 == full.size();

    for (std::size_t j = 0; j < plan.k; ++j) {
      const BlockMap& m = plan.index_maps[j][b];
      check_map(m, g, j, b);
      const ParamBlock<T>& src = sub_params[j].block(b);
      const std::size_t sub_in = m.in_index.size();
      const std::size_t sub_out = m.out_index.size();
      for (std::size_t p = 0; p < g.positions; ++p) {
        for (std::size_t a = 0; a < sub_in; ++a) {
          const std::size_t src_row = (p * sub_in + a) * sub_out;
          const std::size_t dst_row = (p * g.in_units + m.in_index[a]) * g.out_units;
          for (std::size_t o = 0; o < sub_out; ++o) {
            const std::size_t d = dst_row + m.out_index[o];
            if (is_output) {
              dst.weights[d] += src.weights[src_row + o] / k;
              dst.weight_momentum[d] += src.weight_momentum[src_row + o] / k;
            } else {
              dst.weights[d] = src.weights[src_row + o];
              dst.weight_momentum[d] = src.weight_momentum[src_row + o];
            }
          }
        }
      }
      if (!is_output) {
        for (std::size_t o = 0; o < sub_out; ++o) {
          dst.bias[m.out_index[o]] = src.bias[o];
          dst.bias_momentum[m.out_index[o]] = src.bias_momentum[o];
        }
      }
    }

    if (is_output) {
      // Sorted summation makes the mean independent of sub-model order.
      std::vector<T> values(plan.k);
      const auto mean_of = [&](auto member, std::size_t o) {
        for (std::size_t j = 0; j < plan.k; ++j) {
          values[j] = (sub_params[j].block(b).*member)[o];
        }
        std::sort(values.begin(), values.end());
        T sum = 0;
        for (T v : values) sum += v;
        return sum / k;
      };
      for (std::size_t o = 0; o < g.out_units; ++o) {
        dst.bias[o] = mean_of(&ParamBlock<T>::bias, o);
        dst.bias_momentum[o] = mean_of(&ParamBlock<T>::bias_momentum, o);
      }
    }
  }
  return full;
}

template <typename T>
ParameterStore<T> extract_submodel(const PartitionPlan& plan, const ParameterStore<T>& full,
                                   std::size_t index) {
  if (index >= plan.k) throw MergeError("sub-model index out of range");
  full.require_matches(plan.spec, "full model");
  ParameterStore<T> sub = ParameterStore<T>::zeros(plan.sub_specs[index]);
  for (std::size_t b = 0; b < sub.size(); ++b) {
    const BlockGeometry g = geometry(plan.spec.layer(plan.spec.param_layers()[b]));
    const BlockMap& m = plan.index_maps[index][b];
    check_map(m, g, index, b);
    const ParamBlock<T>& src = full.block(b);
    ParamBlock<T>& dst = sub.block(b);
    const std::size_t sub_in = m.in_index.size();
    const std::size_t sub_out = m.out_index.size();
    for (std::size_t p = 0; p < g.positions; ++p) {
      for (std::size_t a = 0; a < sub_in; ++a) {
        const std::size_t dst_row = (p * sub_in + a) * sub_out;
        const std::size_t src_row = (p * g.in_units + m.in_index[a]) * g.out_units;
        for (std::size_t o = 0; o < sub_out; ++o) {
          dst.weights[dst_row + o] = src.weights[src_row + m.out_index[o]];
          dst.weight_momentum[dst_row + o] = src.weight_momentum[src_row + m.out_index[o]];
        }
      }
    }
    for (std::size_t o = 0; o < sub_out; ++o) {
      dst.bias[o] = src.bias[m.out_index[o]];
      dst.bias_momentum[o] = src.bias_momentum[m.out_index[o]];
    }
  }
  return sub;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() == 0 || logits.dim(0) == 0) return logits;
  const std::size_t n = logits.dim(0);
  const std::size_t classes = logits.size() / n;
  Tensor<T> out(logits.shape());
  for (std::size_t s = 0; s < n; ++s) {
    const auto r = softmax_xent<T>(logits.values().subspan(s * classes, classes), 0);
    std::copy(r.probs.begin(), r.probs.end(), out.data() + s * classes);
  }
  return out;
}

template <typename T>
Tensor<T> ensemble_logits(std::span<const Model<T>> models, const Tensor<T>& input) {
  if (models.empty()) throw MergeError("ensemble of zero models");
  const NetworkSpec& first = models.front().spec;
  Tensor<T> sum;
  for (const Model<T>& m : models) {
    if (!(m.spec.input() == first.input()) || m.spec.classes() != first.classes()) {
      throw ShapeError("ensemble members must share input shape and class count");
    }
    Network<T> net(m.spec);
    Tensor<T> z = net.logits(m.params, input);
    if (sum.empty()) {
      sum = std::move(z);
    } else {
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += z[i];
    }
  }
  const T k = static_cast<T>(models.size());
  for (T& v : sum.values()) v /= k;
  return sum;
}

template <typename T>
double merged_equals_ensemble_check(const PartitionPlan& plan,
                                    std::span<const ParameterStore<T>> sub_params,
                                    const Tensor<T>& probe) {
  const ParameterStore<T> merged = merge<T>(plan, sub_params);
  Network<T> full(plan.spec);
  const Tensor<T> merged_probs = full.probabilities(merged, probe);

  std::vector<Model<T>> models;
  models.reserve(plan.k);
  for (std::size_t j = 0; j < plan.k; ++j) models.push_back({plan.sub_specs[j], sub_params[j]});
  const Tensor<T> ensemble_probs = softmax(ensemble_logits<T>(models, probe));

  double worst = 0.0;
  for (std::size_t i = 0; i < merged_probs.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(merged_probs[i]) -
                                     static_cast<double>(ensemble_probs[i])));
  }
  return worst;
}

#define PARTRAIN_INSTANTIATE_MERGE(T)                                                         \
  template ParameterStore<T> merge(const PartitionPlan&, std::span<const ParameterStore<T>>); \
  template ParameterStore<T> extract_submodel(const PartitionPlan&, const ParameterStore<T>&, \
                                              std::size_t);                                   \
  template Tensor<T> ensemble_logits(std::span<const Model<T>>, const Tensor<T>&);           \
  template double merged_equals_ensemble_check(                                               \
      const PartitionPlan&, std::span<const ParameterStore<T>>, const Tensor<T>&);            \
  template Tensor<T> softmax(const Tensor<T>&);

PARTRAIN_INSTANTIATE_MERGE(float)
PARTRAIN_INSTANTIATE_MERGE(double)

#undef PARTRAIN_INSTANTIATE_MERGE

}  // namespace partrain
