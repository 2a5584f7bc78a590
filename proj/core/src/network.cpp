#include "partrain/network.hpp"

#include <string>

namespace partrain {

template <typename T>
Network<T>::Network(NetworkSpec spec)
    : spec_(std::move(spec)),
      caches_(spec_.layers().size()),
      block_of_layer_(spec_.layers().size(), -1) {
  const auto& blocks = spec_.param_layers();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    block_of_layer_[blocks[b]] = static_cast<std::ptrdiff_t>(b);
  }
}

template <typename T>
Tensor<T> Network<T>::run(const ParameterStore<T>& params, const Tensor<T>& batch,
                          Mode mode, Rng& rng, bool cache) {
  if (params.size() != spec_.param_layers().size()) {
    throw ShapeError("network '" + spec_.name() + "' expects " +
                     std::to_string(spec_.param_layers().size()) +
                     " parameter blocks, got " + std::to_string(params.size()));
  }
  const std::size_t head = spec_.layers().size() - 1;
  const Tensor<T>* current = &batch;
  Tensor<T> activation;
  for (std::size_t i = 0; i < head; ++i) {
    const std::ptrdiff_t b = block_of_layer_[i];
    const ParamBlock<T>* p = b >= 0 ? &params.block(static_cast<std::size_t>(b)) : nullptr;
    activation = forward(spec_.layer(i), p, *current, mode, rng,
                         cache ? &caches_[i] : nullptr);
    current = &activation;
  }
  return activation;
}

template <typename T>
Tensor<T> Network<T>::logits(const ParameterStore<T>& params, const Tensor<T>& batch,
                             Mode mode, Rng& rng) {
  return run(params, batch, mode, rng, false);
}

template <typename T>
Tensor<T> Network<T>::logits(const ParameterStore<T>& params, const Tensor<T>& batch) {
  Rng unused(0);
  return run(params, batch, Mode::eval, unused, false);
}

template <typename T>
Tensor<T> Network<T>::probabilities(const ParameterStore<T>& params,
                                    const Tensor<T>& batch) {
  Rng unused(0);
  const Tensor<T> z = run(params, batch, Mode::eval, unused, false);
  return forward(spec_.layers().back(), static_cast<const ParamBlock<T>*>(nullptr), z,
                 Mode::eval, unused);
}

template <typename T>
BatchLoss Network<T>::train_batch(const ParameterStore<T>& params, const Tensor<T>& batch,
                                  std::span<const std::uint16_t> labels, Rng& rng,
                                  Gradients<T>& grads) {
  const std::size_t n = batch.rank() == 0 ? 0 : batch.dim(0);
  if (n == 0) throw ShapeError("train_batch: empty batch");
  if (labels.size() != n) throw ShapeError("train_batch: label count differs from batch size");

  const Tensor<T> z = run(params, batch, Mode::train, rng, true);
  const std::size_t classes = spec_.classes();
  Tensor<T> upstream(z.shape());
  BatchLoss result;
  const T inv_n = T{1} / static_cast<T>(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto r = softmax_xent<T>(z.values().subspan(s * classes, classes), labels[s]);
    result.loss += static_cast<double>(r.loss);
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (r.probs[c] > r.probs[best]) best = c;
    }
    if (best == labels[s]) ++result.correct;
    for (std::size_t c = 0; c < classes; ++c) upstream[s * classes + c] = r.logit_grad[c] * inv_n;
  }
  result.loss /= static_cast<double>(n);

  const std::size_t blocks = spec_.param_layers().size();
  grads.weights.resize(blocks);
  grads.bias.resize(blocks);
  for (std::size_t i = spec_.layers().size() - 1; i-- > 0;) {
    const std::ptrdiff_t b = block_of_layer_[i];
    const ParamBlock<T>* p = b >= 0 ? &params.block(static_cast<std::size_t>(b)) : nullptr;
    LayerGradients<T> g = backward(spec_.layer(i), p, caches_[i], upstream, i > 0);
    if (b >= 0) {
      grads.weights[static_cast<std::size_t>(b)] = std::move(g.weights);
      grads.bias[static_cast<std::size_t>(b)] = std::move(g.bias);
    }
    upstream = std::move(g.input);
  }
  return result;
}

template <typename T>
double Network<T>::loss(const ParameterStore<T>& params, const Tensor<T>& batch,
                        std::span<const std::uint16_t> labels, Mode mode, Rng& rng) {
  const Tensor<T> z = run(params, batch, mode, rng, false);
  const std::size_t classes = spec_.classes();
  const std::size_t n = z.dim(0);
  if (labels.size() != n) throw ShapeError("loss: label count differs from batch size");
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    total += static_cast<double>(
        softmax_xent<T>(z.values().subspan(s * classes, classes), labels[s]).loss);
  }
  return total / static_cast<double>(n);
}

template class Network<float>;
template class Network<double>;

}  // namespace partrain
