#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "partrain/netspec.hpp"
#include "partrain/params.hpp"

namespace partrain {

// Checkpoint layout (all integers little-endian):
//
//   offset 0   8 bytes  "PARTRAIN"
//   offset 8   uint32   format version (1)
//   offset 12  uint64   header length H
//   offset 20  H bytes  UTF-8 JSON header
//   offset 20+H         parameter data
//
// The JSON header holds "spec" (canonical spec text), "spec_hash" (16 hex
// digits), "precision" (32 or 64), "seeds" (seed lineage, a list of
// integers), "label" and "blocks": one entry per parametric layer in spec
// order with "layer", "weights" and "bias" shapes. The data section stores,
// per block in spec order, weights, bias, weight momentum and bias momentum as
// raw IEEE little-endian values of the stated precision.

struct CheckpointInfo {
  std::string label;
  std::vector<std::uint64_t> seeds;
};

template <typename T>
struct Checkpoint {
  NetworkSpec spec;
  ParameterStore<T> params;
  CheckpointInfo info;
};

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const NetworkSpec& spec,
                                            const ParameterStore<T>& params,
                                            const CheckpointInfo& info);

template <typename T>
void write_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                      const ParameterStore<T>& params, const CheckpointInfo& info);

/// Precision stored in an encoded checkpoint. Throws FormatError if the
/// preamble or header is malformed.
int checkpoint_precision(const std::vector<std::uint8_t>& bytes);

/// Throws FormatError on a bad magic, version, truncated data, a spec whose
/// hash differs from the stored one, shapes that disagree with the spec, or a
/// precision other than T's.
template <typename T>
Checkpoint<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename T>
Checkpoint<T> read_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);

}  // namespace partrain
