#include "partrain/cli/metrics_io.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "partrain/errors.hpp"

namespace partrain::cli {

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> csv_split(std::string_view record) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < record.size(); ++i) {
    const char c = record[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < record.size() && record[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  if (quoted) throw FormatError("unterminated quote in CSV record");
  return fields;
}

std::string format_double(double v) {
  if (std::isnan(v)) return {};
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string submodel_label(int submodel) {
  return submodel == kFullModel ? "merged" : std::to_string(submodel);
}

std::string metrics_row(const MetricsRow& r) {
  std::string out = csv_escape(r.run_id);
  out += ',';
  out += to_string(r.phase);
  out += ',' + submodel_label(r.submodel);
  out += ',' + std::to_string(r.epoch);
  out += ',' + format_double(r.train_loss);
  out += ',' + format_double(r.eval_loss);
  out += ',' + (std::isnan(r.eval_loss) ? std::string() : std::to_string(r.eval_errors));
  out += ',' + format_double(r.wall_seconds);
  out += ',' + format_double(r.cumulative_seconds);
  return out;
}

void write_metrics(std::ostream& out, const std::vector<MetricsRow>& rows, bool header) {
  if (header) out << kMetricsHeader << '\n';
  for (const MetricsRow& r : rows) out << metrics_row(r) << '\n';
}

namespace {

double parse_double(const std::string& s, std::size_t line) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw FormatError("metrics line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

std::size_t parse_count(const std::string& s, std::size_t line) {
  std::size_t v = 0;
  if (s.empty()) return 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw FormatError("metrics line " + std::to_string(line) + ": bad count '" + s + "'");
  }
  return v;
}

}  // namespace

std::vector<MetricsRow> read_metrics(std::istream& in) {
  std::vector<MetricsRow> rows;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (number == 1) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line != kMetricsHeader) throw FormatError("metrics header mismatch");
      continue;
    }
    if (line.empty()) continue;
    const std::vector<std::string> f = csv_split(line);
    if (f.size() != 9) {
      throw FormatError("metrics line " + std::to_string(number) + ": expected 9 fields");
    }
    MetricsRow r;
    r.run_id = f[0];
    if (f[1] == "pretrain") {
      r.phase = Phase::pretrain;
    } else if (f[1] == "finetune") {
      r.phase = Phase::finetune;
    } else {
      throw FormatError("metrics line " + std::to_string(number) + ": bad phase '" + f[1] + "'");
    }
    r.submodel = f[2] == "merged" ? kFullModel : static_cast<int>(parse_count(f[2], number));
    r.epoch = parse_count(f[3], number);
    r.train_loss = parse_double(f[4], number);
    r.eval_loss = parse_double(f[5], number);
    r.eval_errors = parse_count(f[6], number);
    r.wall_seconds = parse_double(f[7], number);
    r.cumulative_seconds = parse_double(f[8], number);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace partrain::cli
