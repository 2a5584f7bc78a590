#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "partrain/netspec.hpp"

namespace partrain::cli {

struct CountRow {
  std::size_t k = 1;
  /// Parameters of the largest sub-model (the first one).
  std::size_t params = 0;
  std::size_t full_params = 0;
  std::uint64_t macs = 0;
  ParamClassBreakdown classes;
};

/// One row per K. LRN layers are duplicated first when K > 1 so that the
/// spec can be partitioned; this does not change any count.
std::vector<CountRow> count_rows(const NetworkSpec& spec, const std::vector<std::size_t>& ks);

/// "100%" for K = 1, otherwise the percentage with two decimals.
std::string percent_label(const CountRow& row);

std::string format_count_table(const std::vector<CountRow>& rows);

struct VerifyOptions {
  std::size_t k = 2;
  std::uint64_t seed = 1;
  int precision = 64;
  std::optional<std::filesystem::path> plan_file;
  std::size_t probe_samples = 8;
  /// Coordinates probed per weight and bias tensor by the gradient check.
  std::size_t gradient_coordinates = 6;
};

struct VerifyCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  std::optional<double> merge_deviation;
  std::optional<double> max_gradient_error;

  bool pass() const;
};

/// Merge-equivalence tolerance for the given precision (1e-12 or 1e-5).
double merge_tolerance(int precision);

inline constexpr double kGradientStep = 1e-5;
inline constexpr double kGradientTolerance = 1e-4;

/// Builds seeded random sub-models, merges them and compares against the
/// ensemble on a random probe batch, checks the plan, and finite-difference
/// checks a sample of gradient coordinates of the full network in 64-bit.
/// Failures are recorded in the report, never thrown.
VerifyReport run_verify(const NetworkSpec& spec, const VerifyOptions& options);

std::string format_verify_report(const VerifyReport& report);

}  // namespace partrain::cli
