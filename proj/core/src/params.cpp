#include "partrain/params.hpp"

#include <cmath>
#include <string>

namespace partrain {

template <typename T>
ParameterStore<T> ParameterStore<T>::zeros(const NetworkSpec& spec) {
  ParameterStore out;
  for (std::size_t index : spec.param_layers()) {
    const ParamShape shape = param_shape(spec.layer(index));
    out.blocks_.push_back({Tensor<T>(shape.weights), Tensor<T>(shape.bias),
                           Tensor<T>(shape.weights), Tensor<T>(shape.bias)});
  }
  return out;
}

template <typename T>
ParameterStore<T> ParameterStore<T>::glorot(const NetworkSpec& spec, Rng& rng) {
  ParameterStore out = zeros(spec);
  for (std::size_t b = 0; b < out.size(); ++b) {
    const ResolvedLayer& l = spec.layer(spec.param_layers()[b]);
    std::size_t fan_in = input_units(l);
    std::size_t fan_out = output_units(l);
    if (const auto* c = std::get_if<layer::Conv2D>(&l.kind)) {
      fan_in *= c->kernel_h * c->kernel_w;
      fan_out *= c->kernel_h * c->kernel_w;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (T& w : out.blocks_[b].weights.values()) {
      w = static_cast<T>(rng.uniform(-limit, limit));
    }
  }
  return out;
}

template <typename T>
void ParameterStore<T>::zero_momenta() {
  for (auto& b : blocks_) {
    b.weight_momentum.fill(T{0});
    b.bias_momentum.fill(T{0});
  }
}

template <typename T>
std::size_t ParameterStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.weights.size() + b.bias.size();
  return n;
}

template <typename T>
bool ParameterStore<T>::matches(const NetworkSpec& spec) const {
  try {
    require_matches(spec, "parameters");
    return true;
  } catch (const ShapeError&) {
    return false;
  }
}

template <typename T>
void ParameterStore<T>::require_matches(const NetworkSpec& spec,
                                        const char* what) const {
  if (blocks_.size() != spec.param_layers().size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(blocks_.size()) +
                     " parameter blocks, spec has " +
                     std::to_string(spec.param_layers().size()));
  }
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const ParamShape shape = param_shape(spec.layer(spec.param_layers()[b]));
    const std::string where = std::string(what) + " block " + std::to_string(b);
    require_shape(blocks_[b].weights, shape.weights, where + " weights");
    require_shape(blocks_[b].bias, shape.bias, where + " bias");
    require_shape(blocks_[b].weight_momentum, shape.weights, where + " weight momentum");
    require_shape(blocks_[b].bias_momentum, shape.bias, where + " bias momentum");
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace partrain
