#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace partrain {

/// Activation shape of a single sample, channels last.
struct Shape3 {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 1;

  std::size_t size() const noexcept { return height * width * channels; }
  bool operator==(const Shape3&) const = default;
};

std::string to_string(const Shape3& shape);

namespace layer {

/// Fully connected layer. Inputs with spatial extent are flattened row-major
/// over (height, width, channels).
struct Dense {
  std::size_t out = 0;
  bool operator==(const Dense&) const = default;
};

/// Valid (unpadded) stride-1 convolution.
struct Conv2D {
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  bool operator==(const Conv2D&) const = default;
};

/// Non-overlapping max pooling; trailing rows/columns that do not fill a
/// window are dropped.
struct MaxPool {
  std::size_t h = 2;
  std::size_t w = 2;
  bool operator==(const MaxPool&) const = default;
};

struct ReLU {
  bool operator==(const ReLU&) const = default;
};

/// Inverted dropout: training scales kept units by 1/(1-p), evaluation is the
/// identity.
struct Dropout {
  double p = 0.5;
  bool operator==(const Dropout&) const = default;
};

/// Cross-channel local response normalization
///   out[c] = in[c] / (k + alpha * sum_{c' in window(c)} in[c']^2)^beta
/// with window(c) = [c - depth_radius, c + depth_radius]. The channels are
/// split into `groups` balanced contiguous blocks and windows never cross a
/// block boundary, which is how a duplicated normalization is represented.
struct Lrn {
  std::size_t depth_radius = 2;
  double k = 2.0;
  double alpha = 1e-4;
  double beta = 0.75;
  std::size_t groups = 1;
  bool operator==(const Lrn&) const = default;
};

/// Softmax output head trained with cross-entropy. Must be the last layer.
struct SoftmaxXent {
  bool operator==(const SoftmaxXent&) const = default;
};

}  // namespace layer

using LayerKind = std::variant<layer::Dense, layer::Conv2D, layer::MaxPool,
                               layer::ReLU, layer::Dropout, layer::Lrn,
                               layer::SoftmaxXent>;

const char* kind_name(const LayerKind& kind);

/// Sizes of `k` contiguous blocks covering `width` units: the first
/// (width mod k) blocks hold ceil(width/k) units, the rest floor(width/k).
std::vector<std::size_t> balanced_split(std::size_t width, std::size_t k);
bool has_params(const LayerKind& kind);

/// Throws SpecError when the attributes are out of range (zero kernel,
/// dropout p outside [0,1), LRN k <= 0 or beta <= 0, ...).
void validate_attributes(const LayerKind& kind);

/// A layer together with the shapes it consumes and produces.
struct ResolvedLayer {
  LayerKind kind;
  Shape3 in;
  Shape3 out;

  bool operator==(const ResolvedLayer&) const = default;
};

/// Unvalidated network description, as produced by the text parser.
struct NetworkDescription {
  std::string name;
  Shape3 input;
  std::size_t classes = 0;
  std::vector<LayerKind> layers;

  bool operator==(const NetworkDescription&) const = default;
};

/// Validated sequential network: shapes compose, the last layer is the
/// softmax head and the last parametric layer is a dense layer producing one
/// logit per class. Immutable after construction.
class NetworkSpec {
 public:
  /// Throws SpecError describing the first structural problem.
  explicit NetworkSpec(NetworkDescription description);

  const std::string& name() const noexcept { return description_.name; }
  const Shape3& input() const noexcept { return description_.input; }
  std::size_t classes() const noexcept { return description_.classes; }
  const NetworkDescription& description() const noexcept { return description_; }
  std::span<const ResolvedLayer> layers() const noexcept { return layers_; }
  const ResolvedLayer& layer(std::size_t i) const { return layers_.at(i); }

  /// Indices (into layers()) of the layers owning parameters, in order. The
  /// i-th entry corresponds to parameter block i.
  const std::vector<std::size_t>& param_layers() const noexcept {
    return param_layers_;
  }
  std::size_t output_layer() const noexcept { return param_layers_.back(); }

  bool operator==(const NetworkSpec& other) const {
    return description_ == other.description_;
  }

 private:
  NetworkDescription description_;
  std::vector<ResolvedLayer> layers_;
  std::vector<std::size_t> param_layers_;
};

/// Weight and bias shapes of a parametric layer. Dense weights are
/// [in, out]; convolution weights are [kernel_h, kernel_w, in_ch, out_ch].
struct ParamShape {
  std::vector<std::size_t> weights;
  std::vector<std::size_t> bias;
};

ParamShape param_shape(const ResolvedLayer& layer);

/// Number of input features a parametric layer is indexed by: flattened
/// features for dense layers, channels for convolutions.
std::size_t input_units(const ResolvedLayer& layer);
/// Number of output neurons (dense) or filters (convolution).
std::size_t output_units(const ResolvedLayer& layer);

std::size_t count_params(const NetworkSpec& spec);

/// Parameters grouped by how they shrink when hidden layers are split K ways:
/// output biases stay constant; other biases and the weights touching the
/// input or the output shrink linearly; weights between two hidden layers
/// shrink quadratically.
struct ParamClassBreakdown {
  std::size_t constant_count = 0;
  std::size_t linear_count = 0;
  std::size_t quadratic_count = 0;

  std::size_t total() const noexcept {
    return constant_count + linear_count + quadratic_count;
  }
  bool operator==(const ParamClassBreakdown&) const = default;
};

ParamClassBreakdown classify_params(const NetworkSpec& spec);

/// Multiply-accumulate count of one forward pass over `batch` samples.
std::uint64_t estimate_flops(const NetworkSpec& spec, std::size_t batch = 1);

struct Violation {
  /// Index into the layer list, or `npos` for network-wide problems.
  std::size_t layer = npos;
  std::string message;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

std::string to_string(const Violation& violation);

/// Lists the obstacles to partitioning. Without `k`, flags layers that couple
/// channels (LRN with a single group) as requiring duplication. With `k`,
/// also flags hidden layers narrower than k and LRN layers whose group count
/// is not k.
std::vector<Violation> validate_partitionable(
    const NetworkDescription& description,
    std::optional<std::size_t> k = std::nullopt);
std::vector<Violation> validate_partitionable(
    const NetworkSpec& spec, std::optional<std::size_t> k = std::nullopt);

/// The MNIST network: two 5x5 convolutions each followed by ReLU and 2x2 max
/// pooling, a ReLU hidden layer with dropout 0.5 and a 10-way softmax.
NetworkSpec lenet_spec(std::size_t conv1 = 20, std::size_t conv2 = 50,
                       std::size_t hidden = 500);

}  // namespace partrain
