#include "partrain/netspec.hpp"

#include <type_traits>

#include "partrain/errors.hpp"
#include "partrain/tensor.hpp"

namespace partrain {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Shape3 resolve_output(const LayerKind& kind, const Shape3& in) {
  return std::visit(
      Overloaded{
          [&](const layer::Dense& d) { return Shape3{1, 1, d.out}; },
          [&](const layer::Conv2D& c) {
            if (c.kernel_h > in.height || c.kernel_w > in.width) {
              throw SpecError("conv2d kernel " + std::to_string(c.kernel_h) +
                              "x" + std::to_string(c.kernel_w) +
                              " does not fit input " + to_string(in));
            }
            return Shape3{in.height - c.kernel_h + 1, in.width - c.kernel_w + 1,
                          c.out_channels};
          },
          [&](const layer::MaxPool& p) {
            if (p.h > in.height || p.w > in.width) {
              throw SpecError("maxpool window " + std::to_string(p.h) + "x" +
                              std::to_string(p.w) + " does not fit input " +
                              to_string(in));
            }
            return Shape3{in.height / p.h, in.width / p.w, in.channels};
          },
          [&](const layer::Lrn& l) {
            if (l.groups > in.channels) {
              throw SpecError("lrn has " + std::to_string(l.groups) +
                              " groups but only " +
                              std::to_string(in.channels) + " channels");
            }
            return in;
          },
          [&](const auto&) { return in; },
      },
      kind);
}

}  // namespace

std::string to_string(const Shape3& shape) {
  return std::to_string(shape.height) + "x" + std::to_string(shape.width) +
         "x" + std::to_string(shape.channels);
}

const char* kind_name(const LayerKind& kind) {
  return std::visit(Overloaded{
                        [](const layer::Dense&) { return "dense"; },
                        [](const layer::Conv2D&) { return "conv2d"; },
                        [](const layer::MaxPool&) { return "maxpool"; },
                        [](const layer::ReLU&) { return "relu"; },
                        [](const layer::Dropout&) { return "dropout"; },
                        [](const layer::Lrn&) { return "lrn"; },
                        [](const layer::SoftmaxXent&) { return "softmax_xent"; },
                    },
                    kind);
}

std::vector<std::size_t> balanced_split(std::size_t width, std::size_t k) {
  if (k == 0) throw SpecError("cannot split into zero blocks");
  std::vector<std::size_t> sizes(k, width / k);
  for (std::size_t i = 0; i < width % k; ++i) ++sizes[i];
  return sizes;
}

bool has_params(const LayerKind& kind) {
  return std::holds_alternative<layer::Dense>(kind) ||
         std::holds_alternative<layer::Conv2D>(kind);
}

void validate_attributes(const LayerKind& kind) {
  std::visit(
      Overloaded{
          [](const layer::Dense& d) {
            if (d.out == 0) throw SpecError("dense needs out >= 1");
          },
          [](const layer::Conv2D& c) {
            if (c.out_channels == 0) throw SpecError("conv2d needs out_channels >= 1");
            if (c.kernel_h == 0 || c.kernel_w == 0) {
              throw SpecError("conv2d kernel dimensions must be >= 1");
            }
          },
          [](const layer::MaxPool& p) {
            if (p.h == 0 || p.w == 0) throw SpecError("maxpool window must be >= 1");
          },
          [](const layer::Dropout& d) {
            if (!(d.p >= 0.0 && d.p < 1.0)) {
              throw SpecError("dropout p must lie in [0, 1)");
            }
          },
          [](const layer::Lrn& l) {
            if (!(l.k > 0.0)) throw SpecError("lrn k must be positive");
            if (!(l.beta > 0.0)) throw SpecError("lrn beta must be positive");
            if (!(l.alpha >= 0.0)) throw SpecError("lrn alpha must be non-negative");
            if (l.groups == 0) throw SpecError("lrn groups must be >= 1");
          },
          [](const auto&) {},
      },
      kind);
}

NetworkSpec::NetworkSpec(NetworkDescription description)
    : description_(std::move(description)) {
  const auto& d = description_;
  if (d.input.size() == 0) throw SpecError("input shape must be non-empty");
  if (d.classes < 2) throw SpecError("classes must be >= 2");
  if (d.layers.empty()) throw SpecError("layer list is empty");

  Shape3 shape = d.input;
  layers_.reserve(d.layers.size());
  for (std::size_t i = 0; i < d.layers.size(); ++i) {
    const LayerKind& kind = d.layers[i];
    try {
      validate_attributes(kind);
      const bool is_head = std::holds_alternative<layer::SoftmaxXent>(kind);
      if (is_head && i + 1 != d.layers.size()) {
        throw SpecError("softmax_xent must be the last layer");
      }
      const Shape3 out = resolve_output(kind, shape);
      layers_.push_back({kind, shape, out});
      if (has_params(kind)) param_layers_.push_back(i);
      shape = out;
    } catch (const SpecError& e) {
      throw SpecError("layer " + std::to_string(i) + " (" + kind_name(kind) +
                      "): " + e.what(), 0, i);
    }
  }

  if (!std::holds_alternative<layer::SoftmaxXent>(d.layers.back())) {
    throw SpecError("the last layer must be softmax_xent", 0, d.layers.size() - 1);
  }
  if (param_layers_.empty()) throw SpecError("network has no parametric layer");
  const std::size_t out_index = param_layers_.back();
  const auto* out_dense = std::get_if<layer::Dense>(&d.layers[out_index]);
  if (out_dense == nullptr || out_index + 2 != d.layers.size()) {
    throw SpecError("softmax_xent must directly follow a dense output layer", 0,
                    d.layers.size() - 1);
  }
  if (out_dense->out != d.classes) {
    throw SpecError("output layer has " + std::to_string(out_dense->out) +
                    " units but the network has " + std::to_string(d.classes) +
                    " classes",
                    0, out_index);
  }
}

ParamShape param_shape(const ResolvedLayer& layer) {
  if (const auto* d = std::get_if<layer::Dense>(&layer.kind)) {
    return {{layer.in.size(), d->out}, {d->out}};
  }
  if (const auto* c = std::get_if<layer::Conv2D>(&layer.kind)) {
    return {{c->kernel_h, c->kernel_w, layer.in.channels, c->out_channels},
            {c->out_channels}};
  }
  return {};
}

std::size_t input_units(const ResolvedLayer& layer) {
  if (std::holds_alternative<layer::Conv2D>(layer.kind)) return layer.in.channels;
  return layer.in.size();
}

std::size_t output_units(const ResolvedLayer& layer) {
  return layer.out.channels;
}

std::size_t count_params(const NetworkSpec& spec) {
  std::size_t total = 0;
  for (std::size_t index : spec.param_layers()) {
    const ParamShape shape = param_shape(spec.layer(index));
    total += shape_size(shape.weights) + shape_size(shape.bias);
  }
  return total;
}

ParamClassBreakdown classify_params(const NetworkSpec& spec) {
  ParamClassBreakdown out;
  const auto& blocks = spec.param_layers();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const ParamShape shape = param_shape(spec.layer(blocks[b]));
    const std::size_t weights = shape_size(shape.weights);
    const std::size_t biases = shape_size(shape.bias);
    const bool is_output = b + 1 == blocks.size();
    const bool is_first = b == 0;
    (is_output ? out.constant_count : out.linear_count) += biases;
    (is_output || is_first ? out.linear_count : out.quadratic_count) += weights;
  }
  return out;
}

std::uint64_t estimate_flops(const NetworkSpec& spec, std::size_t batch) {
  std::uint64_t per_sample = 0;
  for (std::size_t index : spec.param_layers()) {
    const ResolvedLayer& l = spec.layer(index);
    if (const auto* c = std::get_if<layer::Conv2D>(&l.kind)) {
      per_sample += static_cast<std::uint64_t>(l.out.height) * l.out.width *
                    c->kernel_h * c->kernel_w * l.in.channels * c->out_channels;
    } else {
      per_sample += static_cast<std::uint64_t>(l.in.size()) * l.out.size();
    }
  }
  return per_sample * batch;
}

std::string to_string(const Violation& violation) {
  if (violation.layer == Violation::npos) return violation.message;
  return "layer " + std::to_string(violation.layer) + ": " + violation.message;
}

std::vector<Violation> validate_partitionable(
    const NetworkDescription& description, std::optional<std::size_t> k) {
  if (description.layers.empty()) return {{Violation::npos, "empty layer list"}};
  try {
    return validate_partitionable(NetworkSpec(description), k);
  } catch (const SpecError& e) {
    return {{Violation::npos, std::string("invalid spec: ") + e.what()}};
  }
}

std::vector<Violation> validate_partitionable(const NetworkSpec& spec,
                                              std::optional<std::size_t> k) {
  std::vector<Violation> out;
  if (k && *k == 0) {
    out.push_back({Violation::npos, "K must be at least 1"});
    return out;
  }
  const std::size_t output = spec.output_layer();
  bool channels_partitioned = false;
  for (std::size_t i = 0; i < spec.layers().size(); ++i) {
    const ResolvedLayer& l = spec.layer(i);
    if (has_params(l.kind)) {
      if (i != output) {
        if (k && output_units(l) < *k) {
          out.push_back({i, "width " + std::to_string(output_units(l)) +
                                " is smaller than K=" + std::to_string(*k)});
        }
        channels_partitioned = true;
      }
      continue;
    }
    const auto* lrn = std::get_if<layer::Lrn>(&l.kind);
    if (lrn == nullptr || !channels_partitioned) continue;
    if (!k) {
      if (lrn->groups == 1) {
        out.push_back({i, "lrn over " + std::to_string(l.in.channels) +
                              " channels couples sub-models and requires duplication"});
      }
    } else if (*k > 1 && lrn->groups != *k) {
      out.push_back(
          {i, lrn->groups == 1
                  ? "lrn over " + std::to_string(l.in.channels) +
                        " channels couples sub-models and requires duplication"
                  : "lrn has " + std::to_string(lrn->groups) +
                        " groups but the partition has K=" + std::to_string(*k)});
    }
  }
  return out;
}

NetworkSpec lenet_spec(std::size_t conv1, std::size_t conv2, std::size_t hidden) {
  NetworkDescription d;
  d.name = "lenet";
  d.input = {28, 28, 1};
  d.classes = 10;
  d.layers = {
      layer::Conv2D{conv1, 5, 5}, layer::ReLU{}, layer::MaxPool{2, 2},
      layer::Conv2D{conv2, 5, 5}, layer::ReLU{}, layer::MaxPool{2, 2},
      layer::Dense{hidden},       layer::ReLU{}, layer::Dropout{0.5},
      layer::Dense{10},           layer::SoftmaxXent{},
  };
  return NetworkSpec(std::move(d));
}

}  // namespace partrain
