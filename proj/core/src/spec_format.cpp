#include "partrain/spec_format.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <variant>
#include <vector>

#include "partrain/errors.hpp"

namespace partrain {
namespace {

constexpr std::string_view kSpecHeader = "partrain-spec";
constexpr std::string_view kPlanHeader = "partrain-plan";

struct Line {
  std::size_t number = 0;
  std::vector<std::string> words;
};

std::vector<Line> tokenize(std::string_view text) {
  std::vector<Line> out;
  std::size_t number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view raw = text.substr(pos, end - pos);
    ++number;
    pos = end + 1;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) {
      raw = raw.substr(0, hash);
    }
    std::istringstream in{std::string(raw)};
    Line line{number, {}};
    for (std::string w; in >> w;) line.words.push_back(std::move(w));
    if (!line.words.empty()) out.push_back(std::move(line));
    if (end == text.size()) break;
  }
  return out;
}

std::string format_real(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename Ex>
std::size_t parse_size(std::string_view s, std::size_t line, const std::string& what) {
  std::size_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    if constexpr (std::is_same_v<Ex, SpecError>) {
      throw SpecError(what + ": expected a non-negative integer, got '" + std::string(s) + "'",
                      line);
    } else {
      throw Ex("line " + std::to_string(line) + ": " + what +
               ": expected a non-negative integer, got '" + std::string(s) + "'");
    }
  }
  return v;
}

double parse_real(std::string_view s, std::size_t line, const std::string& what) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw SpecError(what + ": expected a number, got '" + std::string(s) + "'", line);
  }
  return v;
}

// key=value attributes of one line; each key must be known and appear once.
class Attributes {
 public:
  Attributes(const Line& line, std::size_t first, std::initializer_list<std::string_view> keys)
      : line_(line.number), kind_(line.words[0]) {
    for (std::size_t i = first; i < line.words.size(); ++i) {
      const std::string& w = line.words[i];
      const auto eq = w.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw SpecError(kind_ + ": expected key=value, got '" + w + "'", line_);
      }
      std::string key = w.substr(0, eq);
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
        throw SpecError(kind_ + ": unknown attribute '" + key + "'", line_);
      }
      if (!values_.emplace(key, w.substr(eq + 1)).second) {
        throw SpecError(kind_ + ": attribute '" + key + "' given twice", line_);
      }
    }
  }

  std::size_t size(const std::string& key, std::optional<std::size_t> fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
      if (!fallback) throw SpecError(kind_ + ": missing attribute '" + key + "'", line_);
      return *fallback;
    }
    return parse_size<SpecError>(it->second, line_, kind_ + " " + key);
  }

  double real(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_real(it->second, line_, kind_ + " " + key);
  }

 private:
  std::size_t line_;
  std::string kind_;
  std::map<std::string, std::string> values_;
};

void expect_words(const Line& line, std::size_t n) {
  if (line.words.size() != n) {
    throw SpecError("'" + line.words[0] + "' takes " + std::to_string(n - 1) + " value(s)",
                    line.number);
  }
}

LayerKind parse_layer(const Line& line) {
  const std::string& kind = line.words[0];
  if (kind == "dense") {
    const Attributes a(line, 1, {"out"});
    return layer::Dense{a.size("out", std::nullopt)};
  }
  if (kind == "conv2d") {
    const Attributes a(line, 1, {"out_channels", "kernel_h", "kernel_w"});
    return layer::Conv2D{a.size("out_channels", std::nullopt), a.size("kernel_h", std::nullopt),
                         a.size("kernel_w", std::nullopt)};
  }
  if (kind == "maxpool") {
    const Attributes a(line, 1, {"h", "w"});
    const layer::MaxPool d;
    return layer::MaxPool{a.size("h", d.h), a.size("w", d.w)};
  }
  if (kind == "relu") {
    expect_words(line, 1);
    return layer::ReLU{};
  }
  if (kind == "dropout") {
    const Attributes a(line, 1, {"p"});
    return layer::Dropout{a.real("p", layer::Dropout{}.p)};
  }
  if (kind == "lrn") {
    const Attributes a(line, 1, {"depth_radius", "k", "alpha", "beta", "groups"});
    const layer::Lrn d;
    return layer::Lrn{a.size("depth_radius", d.depth_radius), a.real("k", d.k),
                      a.real("alpha", d.alpha), a.real("beta", d.beta),
                      a.size("groups", d.groups)};
  }
  if (kind == "softmax_xent") {
    expect_words(line, 1);
    return layer::SoftmaxXent{};
  }
  throw SpecError("unknown layer kind '" + kind + "'", line.number);
}

struct ParsedSpec {
  NetworkDescription description;
  std::vector<std::size_t> layer_lines;
  std::size_t header_line = 1;
};

ParsedSpec parse_with_lines(std::string_view text) {
  const std::vector<Line> lines = tokenize(text);
  if (lines.empty()) throw SpecError("empty spec", 1);
  const Line& header = lines.front();
  if (header.words[0] != kSpecHeader) {
    throw SpecError("expected '" + std::string(kSpecHeader) + " 1' header", header.number);
  }
  expect_words(header, 2);
  if (header.words[1] != "1") {
    throw SpecError("unsupported spec version " + header.words[1], header.number);
  }

  ParsedSpec out;
  out.header_line = header.number;
  bool have_name = false, have_input = false, have_classes = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const Line& line = lines[i];
    const std::string& word = line.words[0];
    if (word == "name" || word == "input" || word == "classes") {
      if (!out.description.layers.empty()) {
        throw SpecError("'" + word + "' must come before the first layer", line.number);
      }
      bool& seen = word == "name" ? have_name : word == "input" ? have_input : have_classes;
      if (seen) throw SpecError("'" + word + "' given twice", line.number);
      seen = true;
    }
    if (word == "name") {
      expect_words(line, 2);
      out.description.name = line.words[1];
    } else if (word == "input") {
      const Attributes a(line, 1, {"height", "width", "channels"});
      out.description.input = Shape3{a.size("height", std::nullopt),
                                     a.size("width", std::nullopt),
                                     a.size("channels", std::nullopt)};
    } else if (word == "classes") {
      expect_words(line, 2);
      out.description.classes = parse_size<SpecError>(line.words[1], line.number, "classes");
    } else {
      out.description.layers.push_back(parse_layer(line));
      out.layer_lines.push_back(line.number);
    }
  }
  const std::size_t last = lines.back().number;
  if (!have_name) throw SpecError("missing 'name'", last);
  if (!have_input) throw SpecError("missing 'input'", last);
  if (!have_classes) throw SpecError("missing 'classes'", last);
  return out;
}

void append_layer(std::ostringstream& os, const LayerKind& kind) {
  std::visit(
      [&](const auto& l) {
        using L = std::decay_t<decltype(l)>;
        os << kind_name(kind);
        if constexpr (std::is_same_v<L, layer::Dense>) {
          os << " out=" << l.out;
        } else if constexpr (std::is_same_v<L, layer::Conv2D>) {
          os << " out_channels=" << l.out_channels << " kernel_h=" << l.kernel_h
             << " kernel_w=" << l.kernel_w;
        } else if constexpr (std::is_same_v<L, layer::MaxPool>) {
          os << " h=" << l.h << " w=" << l.w;
        } else if constexpr (std::is_same_v<L, layer::Dropout>) {
          os << " p=" << format_real(l.p);
        } else if constexpr (std::is_same_v<L, layer::Lrn>) {
          os << " depth_radius=" << l.depth_radius << " k=" << format_real(l.k)
             << " alpha=" << format_real(l.alpha) << " beta=" << format_real(l.beta)
             << " groups=" << l.groups;
        }
        os << '\n';
      },
      kind);
}

[[noreturn]] void plan_error(std::size_t line, const std::string& what) {
  throw FormatError("line " + std::to_string(line) + ": " + what);
}

std::vector<std::size_t> parse_units(std::string_view s, std::size_t line) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t end = s.find(',', pos);
    if (end == std::string_view::npos) end = s.size();
    const std::string_view item = s.substr(pos, end - pos);
    if (item.empty()) plan_error(line, "empty unit list entry");
    const auto dash = item.find('-');
    if (dash == std::string_view::npos) {
      out.push_back(parse_size<FormatError>(item, line, "unit"));
    } else {
      const std::size_t a = parse_size<FormatError>(item.substr(0, dash), line, "range start");
      const std::size_t b = parse_size<FormatError>(item.substr(dash + 1), line, "range end");
      if (b < a) plan_error(line, "range " + std::string(item) + " is reversed");
      for (std::size_t u = a; u <= b; ++u) out.push_back(u);
    }
    pos = end + 1;
    if (end == s.size()) break;
  }
  return out;
}

void append_units(std::ostringstream& os, const std::vector<std::size_t>& units) {
  // Runs of consecutive indices are written as ranges.
  for (std::size_t i = 0; i < units.size();) {
    std::size_t j = i;
    while (j + 1 < units.size() && units[j + 1] == units[j] + 1) ++j;
    if (i > 0) os << ',';
    os << units[i];
    if (j > i) os << '-' << units[j];
    i = j + 1;
  }
}

}  // namespace

NetworkDescription parse_spec_description(std::string_view text) {
  return parse_with_lines(text).description;
}

NetworkSpec parse_spec(std::string_view text) {
  ParsedSpec parsed = parse_with_lines(text);
  try {
    return NetworkSpec(std::move(parsed.description));
  } catch (const SpecError& e) {
    const std::size_t line = e.layer() < parsed.layer_lines.size()
                                 ? parsed.layer_lines[e.layer()]
                                 : parsed.header_line;
    throw SpecError(e.what(), line, e.layer());
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

NetworkSpec load_spec_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return parse_spec(text);
  } catch (const SpecError& e) {
    throw SpecError(path.string() + ": " + e.what(), 0, e.layer());
  }
}

std::string format_spec(const NetworkDescription& d) {
  std::ostringstream os;
  os << kSpecHeader << " 1\n";
  os << "name " << (d.name.empty() ? "unnamed" : d.name) << '\n';
  os << "input height=" << d.input.height << " width=" << d.input.width
     << " channels=" << d.input.channels << '\n';
  os << "classes " << d.classes << '\n';
  for (const LayerKind& kind : d.layers) append_layer(os, kind);
  return os.str();
}

std::string format_spec(const NetworkSpec& spec) { return format_spec(spec.description()); }

std::uint64_t spec_hash(const NetworkSpec& spec) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : format_spec(spec)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, value >>= 4) out[static_cast<std::size_t>(i)] = digits[value & 15];
  return out;
}

PartitionPlan parse_plan(std::string_view text, const NetworkSpec& spec) {
  const std::vector<Line> lines = tokenize(text);
  if (lines.empty()) plan_error(1, "empty plan");
  const Line& header = lines.front();
  if (header.words.size() != 2 || header.words[0] != kPlanHeader || header.words[1] != "1") {
    plan_error(header.number, "expected '" + std::string(kPlanHeader) + " 1' header");
  }

  std::optional<std::size_t> k;
  std::map<std::size_t, std::vector<std::vector<std::size_t>>> sets;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const Line& line = lines[i];
    const std::string& word = line.words[0];
    if (word == "k") {
      if (line.words.size() != 2) plan_error(line.number, "'k' takes one value");
      if (k) plan_error(line.number, "'k' given twice");
      k = parse_size<FormatError>(line.words[1], line.number, "k");
      if (*k == 0) plan_error(line.number, "k must be >= 1");
    } else if (word == "assign") {
      if (!k) plan_error(line.number, "'k' must come before the first assignment");
      if (line.words.size() != 4) plan_error(line.number, "expected 'assign <layer> <submodel> <units>'");
      const std::size_t layer = parse_size<FormatError>(line.words[1], line.number, "layer");
      const std::size_t sub = parse_size<FormatError>(line.words[2], line.number, "submodel");
      if (sub >= *k) plan_error(line.number, "submodel " + std::to_string(sub) + " >= k");
      auto& layer_sets = sets[layer];
      layer_sets.resize(*k);
      const std::vector<std::size_t> units = parse_units(line.words[3], line.number);
      layer_sets[sub].insert(layer_sets[sub].end(), units.begin(), units.end());
    } else {
      plan_error(line.number, "unknown directive '" + word + "'");
    }
  }
  if (!k) plan_error(lines.back().number, "missing 'k'");

  std::vector<LayerAssignment> assignments;
  for (auto& [layer, s] : sets) assignments.push_back({layer, std::move(s)});
  return plan_from_assignments(spec, *k, std::move(assignments));
}

PartitionPlan load_plan_file(const std::filesystem::path& path, const NetworkSpec& spec) {
  return parse_plan(read_text_file(path), spec);
}

std::string format_plan(const PartitionPlan& plan) {
  std::ostringstream os;
  os << kPlanHeader << " 1\n";
  os << "k " << plan.k << '\n';
  for (const LayerAssignment& a : plan.assignments) {
    for (std::size_t i = 0; i < a.sets.size(); ++i) {
      os << "assign " << a.layer << ' ' << i << ' ';
      append_units(os, a.sets[i]);
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace partrain
