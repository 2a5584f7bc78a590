#include "partrain/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

namespace partrain {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using RowVectorMap = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;

std::vector<std::size_t> batch_shape(std::size_t n, const Shape3& s) {
  return {n, s.height, s.width, s.channels};
}

// Fixed row order: Eigen's vectorized reductions depend on buffer alignment,
// which would make training results differ between runs.
template <typename T>
void column_sums(const T* m, std::size_t rows, std::size_t cols, T* out) {
  std::fill(out, out + cols, T{0});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = m + r * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] += row[c];
  }
}

template <typename T>
std::size_t checked_batch(const ResolvedLayer& layer, const Tensor<T>& input) {
  if (input.rank() != 4) {
    throw ShapeError(std::string(kind_name(layer.kind)) +
                     ": expected a rank-4 batch, got " + shape_string(input.shape()));
  }
  const std::size_t n = input.dim(0);
  require_shape(input, batch_shape(n, layer.in), kind_name(layer.kind));
  return n;
}

template <typename T>
const ParamBlock<T>& require_params(const ResolvedLayer& layer,
                                    const ParamBlock<T>* params) {
  if (params == nullptr) {
    throw ShapeError(std::string(kind_name(layer.kind)) + ": missing parameters");
  }
  const ParamShape shape = param_shape(layer);
  require_shape(params->weights, shape.weights, "weights");
  require_shape(params->bias, shape.bias, "bias");
  return *params;
}

// Channel range [begin, end) of the LRN group holding each channel.
struct ChannelGroups {
  std::vector<std::size_t> begin;
  std::vector<std::size_t> end;
};

ChannelGroups lrn_groups(std::size_t channels, std::size_t groups) {
  ChannelGroups g{std::vector<std::size_t>(channels), std::vector<std::size_t>(channels)};
  std::size_t start = 0;
  for (std::size_t size : balanced_split(channels, groups)) {
    for (std::size_t c = start; c < start + size; ++c) {
      g.begin[c] = start;
      g.end[c] = start + size;
    }
    start += size;
  }
  return g;
}

// Fills `scale` with k + alpha * windowed sum of squares.
template <typename T>
void lrn_scale(const Tensor<T>& input, const layer::Lrn& attrs, Tensor<T>& scale) {
  const std::size_t channels = input.shape().back();
  const std::size_t rows = input.size() / channels;
  const ChannelGroups g = lrn_groups(channels, attrs.groups);
  const std::size_t r = attrs.depth_radius;
  scale = Tensor<T>(input.shape());
  for (std::size_t row = 0; row < rows; ++row) {
    const T* x = input.data() + row * channels;
    T* s = scale.data() + row * channels;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t lo = std::max(g.begin[c], c >= r ? c - r : 0);
      const std::size_t hi = std::min(g.end[c], c + r + 1);
      T sum = 0;
      for (std::size_t j = lo; j < hi; ++j) sum += x[j] * x[j];
      s[c] = static_cast<T>(attrs.k) + static_cast<T>(attrs.alpha) * sum;
    }
  }
}

template <typename T>
Tensor<T> dense_forward(const ResolvedLayer& layer, const ParamBlock<T>& p,
                        const Tensor<T>& input, std::size_t n) {
  const std::size_t in = layer.in.size();
  const std::size_t out = layer.out.size();
  Tensor<T> y(batch_shape(n, layer.out));
  ConstMatrixMap<T> x(input.data(), n, in);
  ConstMatrixMap<T> w(p.weights.data(), in, out);
  MatrixMap<T> ym(y.data(), n, out);
  ym.noalias() = x * w;
  ym.rowwise() += RowVectorMap<T>(p.bias.data(), out);
  return y;
}

template <typename T>
void im2col(const ResolvedLayer& layer, const layer::Conv2D& c, const Tensor<T>& input,
            std::size_t n, Tensor<T>& cols) {
  const Shape3& in = layer.in;
  const Shape3& out = layer.out;
  const std::size_t patch = c.kernel_h * c.kernel_w * in.channels;
  cols = Tensor<T>({n * out.height * out.width, patch});
  const std::size_t span = in.channels * sizeof(T);
  T* row = cols.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t oy = 0; oy < out.height; ++oy) {
      for (std::size_t ox = 0; ox < out.width; ++ox) {
        for (std::size_t ky = 0; ky < c.kernel_h; ++ky) {
          const T* src = input.data() + ((s * in.height + oy + ky) * in.width + ox) * in.channels;
          std::memcpy(row + ky * c.kernel_w * in.channels, src, c.kernel_w * span);
        }
        row += patch;
      }
    }
  }
}

template <typename T>
Tensor<T> col2im(const ResolvedLayer& layer, const layer::Conv2D& c, const Tensor<T>& dcols,
                 std::size_t n) {
  const Shape3& in = layer.in;
  const Shape3& out = layer.out;
  const std::size_t patch = c.kernel_h * c.kernel_w * in.channels;
  const std::size_t run = c.kernel_w * in.channels;
  Tensor<T> dx(batch_shape(n, in));
  const T* row = dcols.data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t oy = 0; oy < out.height; ++oy) {
      for (std::size_t ox = 0; ox < out.width; ++ox) {
        for (std::size_t ky = 0; ky < c.kernel_h; ++ky) {
          T* dst = dx.data() + ((s * in.height + oy + ky) * in.width + ox) * in.channels;
          const T* src = row + ky * run;
          for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
        }
        row += patch;
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> conv_forward(const ResolvedLayer& layer, const layer::Conv2D& c,
                       const ParamBlock<T>& p, const Tensor<T>& input, std::size_t n,
                       LayerCache<T>* cache) {
  Tensor<T> local;
  Tensor<T>& cols = cache != nullptr ? cache->aux : local;
  im2col(layer, c, input, n, cols);
  const std::size_t rows = cols.dim(0);
  const std::size_t patch = cols.dim(1);
  Tensor<T> y(batch_shape(n, layer.out));
  ConstMatrixMap<T> cm(cols.data(), rows, patch);
  ConstMatrixMap<T> w(p.weights.data(), patch, c.out_channels);
  MatrixMap<T> ym(y.data(), rows, c.out_channels);
  ym.noalias() = cm * w;
  ym.rowwise() += RowVectorMap<T>(p.bias.data(), c.out_channels);
  return y;
}

template <typename T>
Tensor<T> maxpool_forward(const ResolvedLayer& layer, const layer::MaxPool& mp,
                          const Tensor<T>& input, std::size_t n,
                          std::vector<std::size_t>* argmax) {
  const Shape3& in = layer.in;
  const Shape3& out = layer.out;
  Tensor<T> y(batch_shape(n, out));
  if (argmax != nullptr) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t oy = 0; oy < out.height; ++oy) {
      for (std::size_t ox = 0; ox < out.width; ++ox) {
        const std::size_t base = (s * in.height + oy * mp.h) * in.width + ox * mp.w;
        for (std::size_t ch = 0; ch < out.channels; ++ch, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_at = 0;
          for (std::size_t ky = 0; ky < mp.h; ++ky) {
            for (std::size_t kx = 0; kx < mp.w; ++kx) {
              const std::size_t at = (base + ky * in.width + kx) * in.channels + ch;
              if (input[at] > best) {
                best = input[at];
                best_at = at;
              }
            }
          }
          y[o] = best;
          if (argmax != nullptr) (*argmax)[o] = best_at;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& input, std::size_t n) {
  Tensor<T> probs(input.shape());
  const std::size_t classes = n == 0 ? 0 : input.size() / n;
  for (std::size_t s = 0; s < n; ++s) {
    const T* x = input.data() + s * classes;
    T* p = probs.data() + s * classes;
    const T m = *std::max_element(x, x + classes);
    T sum = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = std::exp(x[c] - m);
      sum += p[c];
    }
    for (std::size_t c = 0; c < classes; ++c) p[c] /= sum;
  }
  return probs;
}

template <typename T>
void require_cache(const ResolvedLayer& layer, const LayerCache<T>& cache) {
  if (!cache.valid) {
    throw Error(std::string(kind_name(layer.kind)) + ": backward called before forward");
  }
}

}  // namespace

template <typename T>
Tensor<T> forward(const ResolvedLayer& layer, const ParamBlock<T>* params,
                  const Tensor<T>& input, Mode mode, Rng& rng, LayerCache<T>* cache) {
  const std::size_t n = checked_batch(layer, input);
  if (!has_params(layer.kind) && params != nullptr) {
    throw ShapeError(std::string(kind_name(layer.kind)) + " takes no parameters");
  }
  if (cache != nullptr) {
    cache->valid = false;
    cache->argmax.clear();
  }

  Tensor<T> out;
  if (std::holds_alternative<layer::Dense>(layer.kind)) {
    out = dense_forward(layer, require_params(layer, params), input, n);
  } else if (const auto* c = std::get_if<layer::Conv2D>(&layer.kind)) {
    out = conv_forward(layer, *c, require_params(layer, params), input, n, cache);
  } else if (const auto* mp = std::get_if<layer::MaxPool>(&layer.kind)) {
    out = maxpool_forward(layer, *mp, input, n, cache ? &cache->argmax : nullptr);
  } else if (std::holds_alternative<layer::ReLU>(layer.kind)) {
    out = input;
    for (T& v : out.values()) v = v < T{0} ? T{0} : v;
  } else if (const auto* d = std::get_if<layer::Dropout>(&layer.kind)) {
    out = input;
    if (mode == Mode::train && d->p > 0.0) {
      const double keep = 1.0 - d->p;
      const T scale = static_cast<T>(1.0 / keep);
      Tensor<T> mask(input.shape());
      for (T& m : mask.values()) m = rng.bernoulli(keep) ? scale : T{0};
      for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
      if (cache != nullptr) cache->aux = std::move(mask);
    } else if (cache != nullptr) {
      cache->aux = Tensor<T>(input.shape(), T{1});
    }
  } else if (const auto* lrn = std::get_if<layer::Lrn>(&layer.kind)) {
    Tensor<T> local;
    Tensor<T>& scale = cache != nullptr ? cache->aux : local;
    lrn_scale(input, *lrn, scale);
    out = input;
    const T beta = static_cast<T>(lrn->beta);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= std::pow(scale[i], -beta);
  } else {
    out = softmax_rows(input, n);
    if (cache != nullptr) cache->aux = out;
  }

  require_finite(out, std::string(kind_name(layer.kind)) + " forward");
  if (cache != nullptr) {
    const bool keeps_input = std::holds_alternative<layer::Dense>(layer.kind) ||
                             std::holds_alternative<layer::ReLU>(layer.kind) ||
                             std::holds_alternative<layer::Lrn>(layer.kind);
    cache->input = keeps_input ? input : Tensor<T>();
    cache->batch = n;
    cache->valid = true;
  }
  return out;
}

template <typename T>
LayerGradients<T> backward(const ResolvedLayer& layer, const ParamBlock<T>* params,
                           const LayerCache<T>& cache, const Tensor<T>& upstream,
                           bool need_input_grad) {
  require_cache(layer, cache);
  const std::size_t n = cache.batch;
  require_shape(upstream, batch_shape(n, layer.out),
                std::string(kind_name(layer.kind)) + " upstream gradient");

  LayerGradients<T> g;
  if (std::holds_alternative<layer::Dense>(layer.kind)) {
    const ParamBlock<T>& p = require_params(layer, params);
    const std::size_t in = layer.in.size();
    const std::size_t out = layer.out.size();
    ConstMatrixMap<T> x(cache.input.data(), n, in);
    ConstMatrixMap<T> dy(upstream.data(), n, out);
    ConstMatrixMap<T> w(p.weights.data(), in, out);
    g.weights = Tensor<T>(p.weights.shape());
    g.bias = Tensor<T>(p.bias.shape());
    MatrixMap<T>(g.weights.data(), in, out).noalias() = x.transpose() * dy;
    column_sums(upstream.data(), n, out, g.bias.data());
    if (need_input_grad) {
      g.input = Tensor<T>(batch_shape(n, layer.in));
      MatrixMap<T>(g.input.data(), n, in).noalias() = dy * w.transpose();
    }
  } else if (const auto* c = std::get_if<layer::Conv2D>(&layer.kind)) {
    const ParamBlock<T>& p = require_params(layer, params);
    const std::size_t rows = cache.aux.dim(0);
    const std::size_t patch = cache.aux.dim(1);
    ConstMatrixMap<T> cols(cache.aux.data(), rows, patch);
    ConstMatrixMap<T> dy(upstream.data(), rows, c->out_channels);
    ConstMatrixMap<T> w(p.weights.data(), patch, c->out_channels);
    g.weights = Tensor<T>(p.weights.shape());
    g.bias = Tensor<T>(p.bias.shape());
    MatrixMap<T>(g.weights.data(), patch, c->out_channels).noalias() = cols.transpose() * dy;
    column_sums(upstream.data(), rows, c->out_channels, g.bias.data());
    if (need_input_grad) {
      Tensor<T> dcols({rows, patch});
      MatrixMap<T>(dcols.data(), rows, patch).noalias() = dy * w.transpose();
      g.input = col2im(layer, *c, dcols, n);
    }
  } else if (std::holds_alternative<layer::MaxPool>(layer.kind)) {
    g.input = Tensor<T>(batch_shape(n, layer.in));
    for (std::size_t i = 0; i < upstream.size(); ++i) g.input[cache.argmax[i]] += upstream[i];
  } else if (std::holds_alternative<layer::ReLU>(layer.kind)) {
    g.input = upstream;
    for (std::size_t i = 0; i < g.input.size(); ++i) {
      if (!(cache.input[i] > T{0})) g.input[i] = T{0};
    }
  } else if (std::holds_alternative<layer::Dropout>(layer.kind)) {
    g.input = upstream;
    for (std::size_t i = 0; i < g.input.size(); ++i) g.input[i] *= cache.aux[i];
  } else if (const auto* lrn = std::get_if<layer::Lrn>(&layer.kind)) {
    const std::size_t channels = layer.in.channels;
    const std::size_t rows = n * layer.in.height * layer.in.width;
    const ChannelGroups groups = lrn_groups(channels, lrn->groups);
    const T beta = static_cast<T>(lrn->beta);
    const T two_alpha_beta = static_cast<T>(2.0 * lrn->alpha * lrn->beta);
    const std::size_t r = lrn->depth_radius;
    g.input = Tensor<T>(cache.input.shape());
    std::vector<T> coupling(channels);
    for (std::size_t row = 0; row < rows; ++row) {
      const T* x = cache.input.data() + row * channels;
      const T* s = cache.aux.data() + row * channels;
      const T* dy = upstream.data() + row * channels;
      T* dx = g.input.data() + row * channels;
      for (std::size_t c = 0; c < channels; ++c) {
        coupling[c] = dy[c] * x[c] * std::pow(s[c], -beta - T{1});
      }
      for (std::size_t j = 0; j < channels; ++j) {
        const std::size_t lo = std::max(groups.begin[j], j >= r ? j - r : 0);
        const std::size_t hi = std::min(groups.end[j], j + r + 1);
        T sum = 0;
        for (std::size_t c = lo; c < hi; ++c) sum += coupling[c];
        dx[j] = dy[j] * std::pow(s[j], -beta) - two_alpha_beta * x[j] * sum;
      }
    }
  } else {
    const std::size_t classes = layer.in.size();
    g.input = Tensor<T>(batch_shape(n, layer.in));
    for (std::size_t s = 0; s < n; ++s) {
      const T* p = cache.aux.data() + s * classes;
      const T* dy = upstream.data() + s * classes;
      T dot = 0;
      for (std::size_t c = 0; c < classes; ++c) dot += dy[c] * p[c];
      for (std::size_t c = 0; c < classes; ++c) g.input[s * classes + c] = p[c] * (dy[c] - dot);
    }
  }

  const std::string where = std::string(kind_name(layer.kind)) + " backward";
  require_finite(g.input, where);
  require_finite(g.weights, where);
  require_finite(g.bias, where);
  return g;
}

template <typename T>
Tensor<T> lrn_forward(const Tensor<T>& input, const layer::Lrn& attrs) {
  validate_attributes(attrs);
  if (input.rank() == 0 || input.shape().back() == 0) {
    throw ShapeError("lrn: channel dimension must be >= 1");
  }
  if (attrs.groups > input.shape().back()) {
    throw ShapeError("lrn: more groups than channels");
  }
  Tensor<T> scale;
  lrn_scale(input, attrs, scale);
  Tensor<T> out = input;
  const T beta = static_cast<T>(attrs.beta);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= std::pow(scale[i], -beta);
  require_finite(out, "lrn forward");
  return out;
}

template <typename T>
SoftmaxXentResult<T> softmax_xent(std::span<const T> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw Error("label " + std::to_string(label) + " out of range for " +
                std::to_string(logits.size()) + " classes");
  }
  SoftmaxXentResult<T> r;
  const T m = *std::max_element(logits.begin(), logits.end());
  r.probs.resize(logits.size());
  T sum = 0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    r.probs[c] = std::exp(logits[c] - m);
    sum += r.probs[c];
  }
  for (T& p : r.probs) p /= sum;
  r.loss = std::log(sum) - (logits[label] - m);
  r.logit_grad = r.probs;
  r.logit_grad[label] -= T{1};
  if (!std::isfinite(r.loss)) throw NumericError("non-finite softmax cross-entropy loss");
  return r;
}

#define PARTRAIN_INSTANTIATE_LAYERS(T)                                                    \
  template Tensor<T> forward(const ResolvedLayer&, const ParamBlock<T>*, const Tensor<T>&, \
                             Mode, Rng&, LayerCache<T>*);                                 \
  template LayerGradients<T> backward(const ResolvedLayer&, const ParamBlock<T>*,          \
                                      const LayerCache<T>&, const Tensor<T>&, bool);       \
  template Tensor<T> lrn_forward(const Tensor<T>&, const layer::Lrn&);                    \
  template SoftmaxXentResult<T> softmax_xent(std::span<const T>, std::size_t);

PARTRAIN_INSTANTIATE_LAYERS(float)
PARTRAIN_INSTANTIATE_LAYERS(double)

#undef PARTRAIN_INSTANTIATE_LAYERS

}  // namespace partrain
