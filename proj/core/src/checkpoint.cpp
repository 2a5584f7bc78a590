#include "partrain/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "partrain/errors.hpp"
#include "partrain/spec_format.hpp"

namespace partrain {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'P', 'A', 'R', 'T', 'R', 'A', 'I', 'N'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kPreamble = 8 + 4 + 8;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

template <typename T>
void put_tensor(std::vector<std::uint8_t>& out, const Tensor<T>& t) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
  out.insert(out.end(), p, p + t.size() * sizeof(T));
}

json parse_header(const std::vector<std::uint8_t>& bytes, std::size_t& data_offset) {
  if (bytes.size() < kPreamble) throw FormatError("checkpoint shorter than its preamble");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError("bad checkpoint magic");
  }
  const auto version = get_le<std::uint32_t>(bytes.data() + 8);
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto length = get_le<std::uint64_t>(bytes.data() + 12);
  if (length > bytes.size() - kPreamble) {
    throw FormatError("checkpoint header length " + std::to_string(length) +
                      " exceeds the file size");
  }
  data_offset = kPreamble + static_cast<std::size_t>(length);
  try {
    return json::parse(bytes.begin() + kPreamble, bytes.begin() + static_cast<std::ptrdiff_t>(data_offset));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const NetworkSpec& spec,
                                            const ParameterStore<T>& params,
                                            const CheckpointInfo& info) {
  params.require_matches(spec, "checkpoint");
  json header;
  header["spec"] = format_spec(spec);
  header["spec_hash"] = hex64(spec_hash(spec));
  header["precision"] = static_cast<int>(sizeof(T) * 8);
  header["label"] = info.label;
  header["seeds"] = info.seeds;
  json blocks = json::array();
  for (std::size_t b = 0; b < params.size(); ++b) {
    blocks.push_back({{"layer", spec.param_layers()[b]},
                      {"weights", params.block(b).weights.shape()},
                      {"bias", params.block(b).bias.shape()}});
  }
  header["blocks"] = std::move(blocks);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + sizeof kMagic);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const ParamBlock<T>& blk : params.blocks()) {
    put_tensor(out, blk.weights);
    put_tensor(out, blk.bias);
    put_tensor(out, blk.weight_momentum);
    put_tensor(out, blk.bias_momentum);
  }
  return out;
}

template <typename T>
void write_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                      const ParameterStore<T>& params, const CheckpointInfo& info) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(spec, params, info);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

int checkpoint_precision(const std::vector<std::uint8_t>& bytes) {
  std::size_t offset = 0;
  const json header = parse_header(bytes, offset);
  if (!header.contains("precision") || !header["precision"].is_number_integer()) {
    throw FormatError("checkpoint header lacks precision");
  }
  return header["precision"].get<int>();
}

template <typename T>
Checkpoint<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  std::size_t offset = 0;
  const json header = parse_header(bytes, offset);
  try {
    const int precision = header.at("precision").get<int>();
    if (precision != static_cast<int>(sizeof(T) * 8)) {
      throw FormatError("checkpoint holds " + std::to_string(precision) +
                        "-bit values, expected " + std::to_string(sizeof(T) * 8));
    }
    NetworkSpec spec = parse_spec(header.at("spec").get<std::string>());
    if (hex64(spec_hash(spec)) != header.at("spec_hash").get<std::string>()) {
      throw FormatError("checkpoint spec hash does not match its spec text");
    }
    const json& blocks = header.at("blocks");
    ParameterStore<T> params = ParameterStore<T>::zeros(spec);
    if (blocks.size() != params.size()) throw FormatError("checkpoint block count mismatch");

    std::size_t pos = offset;
    const auto read_tensor = [&](Tensor<T>& t) {
      const std::size_t n = t.size() * sizeof(T);
      if (bytes.size() - pos < n) {
        throw FormatError("checkpoint data truncated at byte " + std::to_string(bytes.size()));
      }
      std::memcpy(t.data(), bytes.data() + pos, n);
      pos += n;
    };
    for (std::size_t b = 0; b < params.size(); ++b) {
      ParamBlock<T>& blk = params.block(b);
      if (blocks[b].at("weights").get<std::vector<std::size_t>>() != blk.weights.shape() ||
          blocks[b].at("bias").get<std::vector<std::size_t>>() != blk.bias.shape()) {
        throw FormatError("checkpoint block " + std::to_string(b) +
                          " shape disagrees with the spec");
      }
      read_tensor(blk.weights);
      read_tensor(blk.bias);
      read_tensor(blk.weight_momentum);
      read_tensor(blk.bias_momentum);
    }
    if (pos != bytes.size()) {
      throw FormatError("checkpoint has " + std::to_string(bytes.size() - pos) +
                        " trailing bytes");
    }
    CheckpointInfo info{header.value("label", std::string()),
                        header.value("seeds", std::vector<std::uint64_t>{})};
    return {std::move(spec), std::move(params), std::move(info)};
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const SpecError& e) {
    throw FormatError(std::string("checkpoint spec: ") + e.what());
  }
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

template <typename T>
Checkpoint<T> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<T>(read_binary_file(path));
}

#define PARTRAIN_INSTANTIATE_CHECKPOINT(T)                                                 \
  template std::vector<std::uint8_t> encode_checkpoint(const NetworkSpec&,                 \
                                                       const ParameterStore<T>&,           \
                                                       const CheckpointInfo&);             \
  template void write_checkpoint(const std::filesystem::path&, const NetworkSpec&,         \
                                 const ParameterStore<T>&, const CheckpointInfo&);         \
  template Checkpoint<T> decode_checkpoint<T>(const std::vector<std::uint8_t>&);           \
  template Checkpoint<T> read_checkpoint<T>(const std::filesystem::path&);

PARTRAIN_INSTANTIATE_CHECKPOINT(float)
PARTRAIN_INSTANTIATE_CHECKPOINT(double)

#undef PARTRAIN_INSTANTIATE_CHECKPOINT

}  // namespace partrain
