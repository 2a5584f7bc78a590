#include "partrain/dataio.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "partrain/errors.hpp"
#include "partrain/rng.hpp"

namespace partrain {
namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const std::streamoff length = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(length));
  if (length > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), length)) {
    throw FormatError("cannot read " + path.string());
  }
  return bytes;
}

std::uint32_t big_endian_u32(const std::vector<unsigned char>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::uint64_t parse_idx_header(const std::vector<unsigned char>& bytes, std::uint32_t magic,
                               std::size_t dims, const std::filesystem::path& path,
                               std::vector<std::uint32_t>& sizes) {
  const std::size_t header = 4 + 4 * dims;
  if (bytes.size() < header) {
    throw FormatError(path.string() + ": truncated IDX header (" +
                      std::to_string(bytes.size()) + " bytes)");
  }
  const std::uint32_t found = big_endian_u32(bytes, 0);
  if (found != magic) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%08x", found);
    throw FormatError(path.string() + ": bad magic " + buf);
  }
  std::uint64_t payload = 1;
  sizes.clear();
  for (std::size_t d = 0; d < dims; ++d) {
    sizes.push_back(big_endian_u32(bytes, 4 + 4 * d));
    payload *= sizes.back();
  }
  if (bytes.size() - header != payload) {
    throw FormatError(path.string() + ": header declares " + std::to_string(payload) +
                      " payload bytes but the file holds " +
                      std::to_string(bytes.size() - header));
  }
  return header;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{shape, classes, {}, {}};
  out.pixels.reserve(indices.size() * shape.size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto img = image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(labels.at(i));
  }
  return out;
}

void Dataset::validate() const {
  if (pixels.size() != labels.size() * shape.size()) {
    throw FormatError("dataset holds " + std::to_string(pixels.size()) + " values for " +
                      std::to_string(labels.size()) + " samples of shape " + to_string(shape));
  }
  for (std::uint16_t l : labels) {
    if (l >= classes) throw FormatError("label " + std::to_string(l) + " out of range");
  }
  for (float v : pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("pixel value outside [0, 1]");
  }
}

Dataset concatenate(const Dataset& a, const Dataset& b) {
  if (!(a.shape == b.shape) || a.classes != b.classes) {
    throw FormatError("cannot concatenate datasets of different shapes");
  }
  Dataset out = a;
  out.pixels.insert(out.pixels.end(), b.pixels.begin(), b.pixels.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const std::vector<unsigned char> image_bytes = read_file(images);
  const std::vector<unsigned char> label_bytes = read_file(labels);
  std::vector<std::uint32_t> image_dims;
  std::vector<std::uint32_t> label_dims;
  const std::size_t image_offset = parse_idx_header(image_bytes, 0x00000803, 3, images, image_dims);
  const std::size_t label_offset = parse_idx_header(label_bytes, 0x00000801, 1, labels, label_dims);
  if (image_dims[0] != label_dims[0]) {
    throw FormatError("image file has " + std::to_string(image_dims[0]) +
                      " samples but label file has " + std::to_string(label_dims[0]));
  }

  Dataset out;
  out.shape = {image_dims[1], image_dims[2], 1};
  out.classes = 10;
  out.pixels.resize(image_bytes.size() - image_offset);
  std::transform(image_bytes.begin() + static_cast<std::ptrdiff_t>(image_offset), image_bytes.end(),
                 out.pixels.begin(), [](unsigned char b) { return static_cast<float>(b) / 255.0f; });
  out.labels.assign(label_bytes.begin() + static_cast<std::ptrdiff_t>(label_offset), label_bytes.end());
  for (std::uint16_t l : out.labels) {
    if (l >= out.classes) throw FormatError(labels.string() + ": label " + std::to_string(l) + " > 9");
  }
  return out;
}

Dataset load_cifar10_bin(std::span<const std::filesystem::path> paths) {
  constexpr std::size_t side = 32;
  constexpr std::size_t plane = side * side;
  constexpr std::size_t record = 1 + 3 * plane;
  Dataset out;
  out.shape = {side, side, 3};
  out.classes = 10;
  for (const auto& path : paths) {
    const std::vector<unsigned char> bytes = read_file(path);
    if (bytes.size() % record != 0) {
      throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) +
                        " is not a multiple of 3073; last record starts at byte offset " +
                        std::to_string(bytes.size() - bytes.size() % record));
    }
    const std::size_t n = bytes.size() / record;
    out.pixels.reserve(out.pixels.size() + n * 3 * plane);
    for (std::size_t r = 0; r < n; ++r) {
      const unsigned char* rec = bytes.data() + r * record;
      if (rec[0] >= 10) {
        throw FormatError(path.string() + ": bad label at byte offset " + std::to_string(r * record));
      }
      out.labels.push_back(rec[0]);
      for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
          out.pixels.push_back(static_cast<float>(rec[1 + c * plane + p]) / 255.0f);
        }
      }
    }
  }
  return out;
}

Dataset synth_blobs(std::size_t n_per_class, std::size_t classes, std::size_t dim,
                    std::uint64_t seed, double separation_sigmas) {
  return synth_blobs(n_per_class, classes, Shape3{1, 1, dim}, seed, separation_sigmas);
}

Dataset synth_blobs(std::size_t n_per_class, std::size_t classes, const Shape3& shape,
                    std::uint64_t seed, double separation_sigmas) {
  const std::size_t dim = shape.size();
  if (classes < 2 || classes > dim) {
    throw FormatError("synth_blobs needs 2 <= classes <= dim");
  }
  if (!(separation_sigmas > 0.0)) throw FormatError("separation must be positive");
  const double sigma = 0.25 * std::sqrt(2.0) / separation_sigmas;
  Rng rng(seed);
  Dataset out;
  out.shape = shape;
  out.classes = classes;
  out.pixels.reserve(n_per_class * classes * dim);
  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t j = 0; j < dim; ++j) {
        const double centre = j == c ? 0.75 : 0.5;
        out.pixels.push_back(static_cast<float>(std::clamp(centre + sigma * rng.normal(), 0.0, 1.0)));
      }
      out.labels.push_back(static_cast<std::uint16_t>(c));
    }
  }
  return out;
}

DatasetSplits split_dataset(const Dataset& data, std::size_t validation_count,
                            std::size_t test_count, std::uint64_t seed) {
  if (validation_count + test_count > data.size()) {
    throw FormatError("split sizes exceed the dataset size");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const std::span<const std::size_t> all(order);
  DatasetSplits s;
  s.validation = data.subset(all.subspan(0, validation_count));
  s.test = data.subset(all.subspan(validation_count, test_count));
  s.train = data.subset(all.subspan(validation_count + test_count));
  return s;
}

template <typename T>
Tensor<T> gather_batch(const Dataset& data, std::span<const std::size_t> indices) {
  const Shape3& s = data.shape;
  Tensor<T> batch({indices.size(), s.height, s.width, s.channels});
  T* dst = batch.data();
  for (std::size_t i : indices) {
    const auto img = data.image(i);
    dst = std::transform(img.begin(), img.end(), dst, [](float v) { return static_cast<T>(v); });
  }
  return batch;
}

std::vector<std::uint16_t> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<std::uint16_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data.labels.at(i));
  return out;
}

template Tensor<float> gather_batch(const Dataset&, std::span<const std::size_t>);
template Tensor<double> gather_batch(const Dataset&, std::span<const std::size_t>);

}  // namespace partrain
