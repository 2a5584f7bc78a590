#pragma once

#include <cstddef>
#include <vector>

#include "partrain/netspec.hpp"
#include "partrain/rng.hpp"
#include "partrain/tensor.hpp"

namespace partrain {

/// Weights, bias and their accumulated momenta for one parametric layer.
template <typename T>
struct ParamBlock {
  Tensor<T> weights;
  Tensor<T> bias;
  Tensor<T> weight_momentum;
  Tensor<T> bias_momentum;

  bool operator==(const ParamBlock&) const = default;
};

/// All trainable state of one network instance. Block i belongs to the i-th
/// entry of NetworkSpec::param_layers().
template <typename T>
class ParameterStore {
 public:
  ParameterStore() = default;

  /// All parameters and momenta zero.
  static ParameterStore zeros(const NetworkSpec& spec);

  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases and momenta
  /// zero.
  static ParameterStore glorot(const NetworkSpec& spec, Rng& rng);

  std::size_t size() const noexcept { return blocks_.size(); }
  ParamBlock<T>& block(std::size_t i) { return blocks_.at(i); }
  const ParamBlock<T>& block(std::size_t i) const { return blocks_.at(i); }
  std::vector<ParamBlock<T>>& blocks() noexcept { return blocks_; }
  const std::vector<ParamBlock<T>>& blocks() const noexcept { return blocks_; }

  void zero_momenta();

  /// Total number of weights and biases.
  std::size_t parameter_count() const;

  /// True when every block has the shapes `spec` implies.
  bool matches(const NetworkSpec& spec) const;

  /// Throws ShapeError naming the first mismatching block.
  void require_matches(const NetworkSpec& spec, const char* what) const;

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    out.blocks().reserve(blocks_.size());
    for (const auto& b : blocks_) {
      out.blocks().push_back({b.weights.template cast<U>(), b.bias.template cast<U>(),
                              b.weight_momentum.template cast<U>(),
                              b.bias_momentum.template cast<U>()});
    }
    return out;
  }

  bool operator==(const ParameterStore&) const = default;

 private:
  std::vector<ParamBlock<T>> blocks_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace partrain
