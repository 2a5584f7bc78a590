#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "partrain/netspec.hpp"
#include "partrain/partition.hpp"

namespace partrain {

// Network spec text, version 1:
//
//   partrain-spec 1
//   name lenet
//   input height=28 width=28 channels=1
//   classes 10
//   conv2d out_channels=20 kernel_h=5 kernel_w=5
//   relu
//   maxpool h=2 w=2
//   dense out=500
//   dropout p=0.5
//   lrn depth_radius=2 k=2 alpha=0.0001 beta=0.75 groups=1
//   softmax_xent
//
// '#' starts a comment. Omitted attributes take their defaults except the
// sizes of dense, conv2d and input, which are required.

/// Parses the text without structural validation. Throws SpecError carrying a
/// 1-based line number.
NetworkDescription parse_spec_description(std::string_view text);

/// Parses and validates. Structural errors are reported at the line of the
/// offending layer.
NetworkSpec parse_spec(std::string_view text);

NetworkSpec load_spec_file(const std::filesystem::path& path);

/// Canonical text: every attribute written, fixed order, no comments.
/// parse_spec(format_spec(s)) == s.
std::string format_spec(const NetworkSpec& spec);
std::string format_spec(const NetworkDescription& description);

/// FNV-1a 64 of the canonical text.
std::uint64_t spec_hash(const NetworkSpec& spec);

/// 16 lowercase hex digits.
std::string hex64(std::uint64_t value);

// Plan text, version 1:
//
//   partrain-plan 1
//   k 2
//   assign 0 0 0-9
//   assign 0 1 10-19
//   assign 3 0 0-24
//   ...
//
// `assign <layer> <submodel> <units>` lists units as comma-separated indices
// or inclusive ranges a-b. Layers not mentioned get no assignment, which
// plan_from_assignments rejects.

/// Builds the plan through plan_from_assignments without verifying it.
/// Throws FormatError on syntax problems (with the line number).
PartitionPlan parse_plan(std::string_view text, const NetworkSpec& spec);

PartitionPlan load_plan_file(const std::filesystem::path& path, const NetworkSpec& spec);

std::string format_plan(const PartitionPlan& plan);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace partrain
