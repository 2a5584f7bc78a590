#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "partrain/layers.hpp"
#include "partrain/netspec.hpp"
#include "partrain/params.hpp"
#include "partrain/rng.hpp"
#include "partrain/tensor.hpp"

namespace partrain {

/// Per-block parameter gradients, shaped like the ParameterStore blocks.
template <typename T>
struct Gradients {
  std::vector<Tensor<T>> weights;
  std::vector<Tensor<T>> bias;
};

struct BatchLoss {
  /// Mean cross-entropy over the batch.
  double loss = 0.0;
  std::size_t correct = 0;
};

/// Runs a NetworkSpec against a ParameterStore. Owns the per-layer caches, so
/// one instance must not be shared between threads.
template <typename T>
class Network {
 public:
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const noexcept { return spec_; }

  /// Output of the layer feeding the softmax head, shape [batch, 1, 1, classes].
  Tensor<T> logits(const ParameterStore<T>& params, const Tensor<T>& batch,
                   Mode mode, Rng& rng);

  /// Eval-mode logits; dropout is the identity so no random stream is needed.
  Tensor<T> logits(const ParameterStore<T>& params, const Tensor<T>& batch);

  /// Eval-mode softmax probabilities.
  Tensor<T> probabilities(const ParameterStore<T>& params, const Tensor<T>& batch);

  /// Train-mode forward and backward pass. Gradients are means over the batch.
  BatchLoss train_batch(const ParameterStore<T>& params, const Tensor<T>& batch,
                        std::span<const std::uint16_t> labels, Rng& rng,
                        Gradients<T>& grads);

  /// Mean cross-entropy of a batch without touching the caches.
  double loss(const ParameterStore<T>& params, const Tensor<T>& batch,
              std::span<const std::uint16_t> labels, Mode mode, Rng& rng);

 private:
  Tensor<T> run(const ParameterStore<T>& params, const Tensor<T>& batch, Mode mode,
                Rng& rng, bool cache);

  NetworkSpec spec_;
  std::vector<LayerCache<T>> caches_;
  std::vector<std::ptrdiff_t> block_of_layer_;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace partrain
