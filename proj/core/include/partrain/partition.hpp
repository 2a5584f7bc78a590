#pragma once

#include <cstddef>
#include <vector>

#include "partrain/netspec.hpp"

namespace partrain {

/// Where the parameters of one sub-model block live in the full model.
/// Weight (a, b) of the sub-model block lands at (in_index[a], out_index[b])
/// of the full block; for convolutions these are channel indices and every
/// kernel position maps to itself.
struct BlockMap {
  std::vector<std::size_t> in_index;
  std::vector<std::size_t> out_index;
  /// True for the output layer, whose parameters every sub-model shares.
  bool output = false;

  bool operator==(const BlockMap&) const = default;
};

/// Split of one hidden parametric layer: sets[i] lists, in increasing order,
/// the neurons or filters owned by sub-model i.
struct LayerAssignment {
  std::size_t layer = 0;
  std::vector<std::vector<std::size_t>> sets;

  bool operator==(const LayerAssignment&) const = default;
};

struct CoordinatePair {
  std::size_t in = 0;
  std::size_t out = 0;

  bool operator==(const CoordinatePair&) const = default;
};

struct PartitionPlan {
  NetworkSpec spec;
  std::size_t k = 1;
  /// One entry per hidden parametric layer, in layer order.
  std::vector<LayerAssignment> assignments;
  std::vector<NetworkSpec> sub_specs;
  /// index_maps[i][b] maps block b of sub-model i into the full model.
  std::vector<std::vector<BlockMap>> index_maps;
};

/// Splits every hidden layer into k balanced contiguous blocks (filters are
/// atomic). Cross-block connections are not part of any sub-model. Throws
/// PartitionError if any hidden layer is narrower than k or a normalization
/// layer still couples channels of different sub-models.
PartitionPlan partition(const NetworkSpec& spec, std::size_t k);

/// Builds sub-specs and index maps from explicit assignments without checking
/// them; run verify_plan() on the result. Throws PartitionError only when a
/// sub-network cannot be formed at all (wrong layer list, empty set).
PartitionPlan plan_from_assignments(const NetworkSpec& spec, std::size_t k,
                                    std::vector<LayerAssignment> assignments);

/// Replaces every normalization layer that follows a hidden layer by k
/// parallel normalizations over the channel blocks partition() would assign.
NetworkSpec duplicate_lrn(const NetworkSpec& spec, std::size_t k);

/// Re-checks every plan invariant from scratch: disjoint and exhaustive
/// hidden assignments, valid sub-specs, index maps consistent with the
/// assignments, hidden parameters owned by at most one sub-model and no
/// normalization window crossing sub-models.
std::vector<Violation> verify_plan(const PartitionPlan& plan, const NetworkSpec& spec);

/// Input/output unit pairs of full block `block` that no sub-model covers.
/// These are the weights the merge sets to zero.
std::vector<CoordinatePair> dropped_coordinates(const PartitionPlan& plan,
                                                std::size_t block);

}  // namespace partrain
