#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "partrain/netspec.hpp"
#include "partrain/params.hpp"
#include "partrain/rng.hpp"
#include "partrain/tensor.hpp"

namespace partrain {

enum class Mode { train, eval };

/// State a layer keeps between forward and backward. Activations are batched
/// tensors of shape [batch, height, width, channels].
template <typename T>
struct LayerCache {
  bool valid = false;
  std::size_t batch = 0;
  Tensor<T> input;
  /// im2col patches (conv2d), scaled keep-mask (dropout), normalization
  /// denominators (lrn) or probabilities (softmax_xent).
  Tensor<T> aux;
  std::vector<std::size_t> argmax;
};

template <typename T>
struct LayerGradients {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

/// Runs one layer on a batch. `params` must be non-null exactly for layers
/// with parameters. When `cache` is given, everything backward() needs is
/// stored in it. Throws ShapeError on mismatched shapes and NumericError on
/// non-finite output.
template <typename T>
Tensor<T> forward(const ResolvedLayer& layer, const ParamBlock<T>* params,
                  const Tensor<T>& input, Mode mode, Rng& rng,
                  LayerCache<T>* cache = nullptr);

/// Reverse-mode pass. The softmax_xent layer is differentiated as a plain
/// softmax (upstream is d/d probabilities); the fused loss gradient comes from
/// softmax_xent(). Throws Error if forward() did not fill the cache. With
/// `need_input_grad` false the input gradient is left empty.
template <typename T>
LayerGradients<T> backward(const ResolvedLayer& layer, const ParamBlock<T>* params,
                           const LayerCache<T>& cache, const Tensor<T>& upstream,
                           bool need_input_grad = true);

/// Cross-channel local response normalization over the last axis.
template <typename T>
Tensor<T> lrn_forward(const Tensor<T>& input, const layer::Lrn& attrs);

template <typename T>
struct SoftmaxXentResult {
  T loss;
  std::vector<T> probs;
  std::vector<T> logit_grad;
};

/// Numerically stable softmax with cross-entropy loss for one sample.
template <typename T>
SoftmaxXentResult<T> softmax_xent(std::span<const T> logits, std::size_t label);

}  // namespace partrain
