#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "partrain/netspec.hpp"
#include "partrain/tensor.hpp"

namespace partrain {

/// Labeled images stored as [N, height, width, channels] with values in
/// [0, 1].
struct Dataset {
  Shape3 shape;
  std::size_t classes = 0;
  std::vector<float> pixels;
  std::vector<std::uint16_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(pixels).subspan(i * shape.size(), shape.size());
  }

  Dataset subset(std::span<const std::size_t> indices) const;

  /// Throws FormatError unless sizes agree, labels are below `classes` and
  /// values lie in [0, 1].
  void validate() const;
};

Dataset concatenate(const Dataset& a, const Dataset& b);

/// Reads an IDX image file (magic 0x00000803) and label file (magic
/// 0x00000801). Pixel bytes are divided by 255. Header sizes are checked
/// against the actual file length before anything is allocated.
Dataset load_mnist_idx(const std::filesystem::path& images,
                       const std::filesystem::path& labels);

/// Reads CIFAR-10 binary batches: 3073-byte records of one label byte and
/// 3072 channel-planar pixels, reordered to height x width x channels.
Dataset load_cifar10_bin(std::span<const std::filesystem::path> paths);

/// Isotropic Gaussian blobs, one per class, with a single-sample shape of
/// 1x1x`dim`. Class c is centred at 0.5 + 0.25 e_c, so centres are 0.25*sqrt(2)
/// apart and sigma is that distance divided by `separation_sigmas`. Values are
/// clamped to [0, 1]. Classes are balanced and interleaved. Requires
/// 2 <= classes <= dim.
Dataset synth_blobs(std::size_t n_per_class, std::size_t classes, std::size_t dim,
                    std::uint64_t seed, double separation_sigmas = 6.0);

/// Same blobs laid out with an explicit image shape (shape.size() >= classes).
Dataset synth_blobs(std::size_t n_per_class, std::size_t classes, const Shape3& shape,
                    std::uint64_t seed, double separation_sigmas = 6.0);

struct DatasetSplits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Seeded shuffle, then the first `validation_count` samples go to validation,
/// the next `test_count` to test and the rest to train.
DatasetSplits split_dataset(const Dataset& data, std::size_t validation_count,
                            std::size_t test_count, std::uint64_t seed);

/// Copies the given samples into a batch tensor [n, height, width, channels].
template <typename T>
Tensor<T> gather_batch(const Dataset& data, std::span<const std::size_t> indices);

/// Labels of the given samples.
std::vector<std::uint16_t> gather_labels(const Dataset& data,
                                         std::span<const std::size_t> indices);

}  // namespace partrain
