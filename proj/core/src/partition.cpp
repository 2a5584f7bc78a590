#include "partrain/partition.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "partrain/errors.hpp"

namespace partrain {
namespace {

std::vector<std::size_t> iota_vector(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

// Feature indices of the full input that a sub-model sees when it owns
// `channels` of an activation of shape `in`. Flattening is row-major over
// (height, width, channels).
std::vector<std::size_t> expand_channels(const Shape3& in,
                                         const std::vector<std::size_t>& channels) {
  std::vector<std::size_t> out;
  out.reserve(in.height * in.width * channels.size());
  for (std::size_t pos = 0; pos < in.height * in.width; ++pos) {
    for (std::size_t c : channels) out.push_back(pos * in.channels + c);
  }
  return out;
}

std::vector<std::size_t> hidden_layers(const NetworkSpec& spec) {
  std::vector<std::size_t> out(spec.param_layers().begin(), spec.param_layers().end() - 1);
  return out;
}

std::string join_violations(const std::vector<Violation>& v) {
  std::string out;
  for (const auto& x : v) {
    if (!out.empty()) out += "; ";
    out += to_string(x);
  }
  return out;
}

}  // namespace

PartitionPlan plan_from_assignments(const NetworkSpec& spec, std::size_t k,
                                    std::vector<LayerAssignment> assignments) {
  if (k == 0) throw PartitionError("K must be at least 1");
  const std::vector<std::size_t> hidden = hidden_layers(spec);
  if (assignments.size() != hidden.size()) {
    throw PartitionError("plan assigns " + std::to_string(assignments.size()) +
                         " layers but the network has " + std::to_string(hidden.size()) +
                         " hidden parametric layers");
  }
  for (std::size_t h = 0; h < hidden.size(); ++h) {
    const LayerAssignment& a = assignments[h];
    if (a.layer != hidden[h]) {
      throw PartitionError("assignment " + std::to_string(h) + " names layer " +
                           std::to_string(a.layer) + ", expected hidden layer " +
                           std::to_string(hidden[h]));
    }
    if (a.sets.size() != k) {
      throw PartitionError("layer " + std::to_string(a.layer) + " has " +
                           std::to_string(a.sets.size()) + " sets, expected " +
                           std::to_string(k));
    }
    for (std::size_t i = 0; i < k; ++i) {
      if (a.sets[i].empty()) {
        throw PartitionError("layer " + std::to_string(a.layer) + ": sub-model " +
                             std::to_string(i) + " owns no units");
      }
    }
  }

  std::vector<NetworkDescription> subs(k, NetworkDescription{
                                              spec.name(), spec.input(), spec.classes(), {}});
  std::vector<std::vector<BlockMap>> maps(k);
  // Channels of the current activation owned by each sub-model; empty while
  // the activation is still the shared network input.
  std::vector<std::vector<std::size_t>> owned;
  std::size_t next_assignment = 0;

  for (std::size_t i = 0; i < spec.layers().size(); ++i) {
    const ResolvedLayer& l = spec.layer(i);
    if (!has_params(l.kind)) {
      for (std::size_t j = 0; j < k; ++j) {
        LayerKind kind = l.kind;
        if (auto* lrn = std::get_if<layer::Lrn>(&kind); lrn != nullptr && !owned.empty()) {
          lrn->groups = 1;
        }
        subs[j].layers.push_back(kind);
      }
      continue;
    }
    const bool is_output = i == spec.output_layer();
    const bool conv = std::holds_alternative<layer::Conv2D>(l.kind);
    const LayerAssignment* a = is_output ? nullptr : &assignments[next_assignment++];
    for (std::size_t j = 0; j < k; ++j) {
      BlockMap m;
      m.output = is_output;
      if (owned.empty()) {
        m.in_index = iota_vector(input_units(l));
      } else if (conv) {
        m.in_index = owned[j];
      } else {
        m.in_index = expand_channels(l.in, owned[j]);
      }
      m.out_index = is_output ? iota_vector(output_units(l)) : a->sets[j];
      LayerKind kind = l.kind;
      if (!is_output) {
        if (auto* d = std::get_if<layer::Dense>(&kind)) d->out = m.out_index.size();
        if (auto* c = std::get_if<layer::Conv2D>(&kind)) c->out_channels = m.out_index.size();
      }
      subs[j].layers.push_back(kind);
      maps[j].push_back(std::move(m));
    }
    if (!is_output) owned = a->sets;
  }

  PartitionPlan plan{spec, k, std::move(assignments), {}, std::move(maps)};
  plan.sub_specs.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    try {
      plan.sub_specs.emplace_back(std::move(subs[j]));
    } catch (const SpecError& e) {
      throw PartitionError("sub-model " + std::to_string(j) + " is not a valid network: " +
                           e.what());
    }
  }
  return plan;
}

PartitionPlan partition(const NetworkSpec& spec, std::size_t k) {
  if (k == 0) throw PartitionError("K must be at least 1");
  if (const auto v = validate_partitionable(spec, k); !v.empty()) {
    throw PartitionError("cannot partition '" + spec.name() + "' into " +
                         std::to_string(k) + ": " + join_violations(v));
  }
  std::vector<LayerAssignment> assignments;
  for (std::size_t index : hidden_layers(spec)) {
    LayerAssignment a{index, {}};
    std::size_t start = 0;
    for (std::size_t size : balanced_split(output_units(spec.layer(index)), k)) {
      std::vector<std::size_t> set(size);
      std::iota(set.begin(), set.end(), start);
      a.sets.push_back(std::move(set));
      start += size;
    }
    assignments.push_back(std::move(a));
  }
  return plan_from_assignments(spec, k, std::move(assignments));
}

NetworkSpec duplicate_lrn(const NetworkSpec& spec, std::size_t k) {
  if (k == 0) throw PartitionError("K must be at least 1");
  if (k == 1) return spec;
  NetworkDescription d = spec.description();
  bool partitioned = false;
  for (std::size_t i = 0; i < d.layers.size(); ++i) {
    if (has_params(d.layers[i]) && i != spec.output_layer()) partitioned = true;
    auto* lrn = std::get_if<layer::Lrn>(&d.layers[i]);
    if (lrn == nullptr || !partitioned) continue;
    const std::size_t channels = spec.layer(i).in.channels;
    if (channels < k) {
      throw PartitionError("layer " + std::to_string(i) + ": lrn over " +
                           std::to_string(channels) + " channels cannot be split " +
                           std::to_string(k) + " ways");
    }
    lrn->groups = k;
  }
  return NetworkSpec(std::move(d));
}

std::vector<Violation> verify_plan(const PartitionPlan& plan, const NetworkSpec& spec) {
  std::vector<Violation> out;
  auto add = [&](std::size_t layer, std::string msg) { out.push_back({layer, std::move(msg)}); };

  if (plan.k == 0) {
    add(Violation::npos, "K must be at least 1");
    return out;
  }
  if (!(plan.spec == spec)) add(Violation::npos, "plan was built for a different network");
  if (plan.sub_specs.size() != plan.k || plan.index_maps.size() != plan.k) {
    add(Violation::npos, "plan must hold exactly K sub-models");
    return out;
  }
  const std::vector<std::size_t> hidden = hidden_layers(spec);
  if (plan.assignments.size() != hidden.size()) {
    add(Violation::npos, "plan must assign every hidden parametric layer");
    return out;
  }

  // Assignment checks: ordered, in range, disjoint, exhaustive.
  for (std::size_t h = 0; h < hidden.size(); ++h) {
    const LayerAssignment& a = plan.assignments[h];
    const std::size_t layer = hidden[h];
    if (a.layer != layer) {
      add(layer, "assignment names layer " + std::to_string(a.layer));
      continue;
    }
    if (a.sets.size() != plan.k) {
      add(layer, "assignment must have K sets");
      continue;
    }
    const std::size_t width = output_units(spec.layer(layer));
    std::vector<unsigned> seen(width, 0);
    bool range_ok = true;
    for (std::size_t j = 0; j < plan.k; ++j) {
      const auto& set = a.sets[j];
      if (set.empty()) add(layer, "sub-model " + std::to_string(j) + " owns no units");
      if (!std::is_sorted(set.begin(), set.end()) ||
          std::adjacent_find(set.begin(), set.end()) != set.end()) {
        add(layer, "sub-model " + std::to_string(j) + " assignment is not ordered");
      }
      for (std::size_t u : set) {
        if (u >= width) {
          range_ok = false;
        } else {
          ++seen[u];
        }
      }
    }
    if (!range_ok) add(layer, "unit index out of range");
    if (std::any_of(seen.begin(), seen.end(), [](unsigned c) { return c > 1; })) {
      add(layer, "not disjoint: a unit is assigned to more than one sub-model");
    }
    if (std::any_of(seen.begin(), seen.end(), [](unsigned c) { return c == 0; })) {
      add(layer, "not exhaustive: a unit is assigned to no sub-model");
    }
  }
  if (!out.empty()) return out;

  // Sub-specs must be the induced networks: same layers, widths equal to the
  // assigned set sizes, inputs and outputs unchanged.
  const auto& blocks = spec.param_layers();
  for (std::size_t j = 0; j < plan.k; ++j) {
    const NetworkSpec& sub = plan.sub_specs[j];
    const std::string who = "sub-model " + std::to_string(j);
    if (!(sub.input() == spec.input()) || sub.classes() != spec.classes() ||
        sub.layers().size() != spec.layers().size()) {
      add(Violation::npos, who + " does not share the network's input, output and depth");
      continue;
    }
    std::size_t h = 0;
    for (std::size_t i = 0; i < spec.layers().size(); ++i) {
      const ResolvedLayer& full = spec.layer(i);
      const ResolvedLayer& part = sub.layer(i);
      if (full.kind.index() != part.kind.index()) {
        add(i, who + " has a different layer kind");
        continue;
      }
      if (has_params(full.kind) && i != spec.output_layer()) {
        const std::size_t expected = plan.assignments[h++].sets[j].size();
        if (output_units(part) != expected) {
          add(i, who + " width " + std::to_string(output_units(part)) +
                     " differs from its assignment size " + std::to_string(expected));
        }
      }
    }
  }
  if (!out.empty()) return out;

  // Index maps, rebuilt unit by unit from the assignments.
  for (std::size_t j = 0; j < plan.k; ++j) {
    const auto& maps = plan.index_maps[j];
    const std::string who = "sub-model " + std::to_string(j);
    if (maps.size() != blocks.size()) {
      add(Violation::npos, who + " has the wrong number of block maps");
      continue;
    }
    const std::vector<std::size_t>* prev = nullptr;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const ResolvedLayer& full = spec.layer(blocks[b]);
      const ResolvedLayer& part = plan.sub_specs[j].layer(blocks[b]);
      const BlockMap& m = maps[b];
      const bool is_output = b + 1 == blocks.size();
      if (m.output != is_output) add(blocks[b], who + " map has the wrong output flag");
      if (m.in_index.size() != input_units(part) || m.out_index.size() != output_units(part)) {
        add(blocks[b], who + " map size disagrees with its sub-spec");
        continue;
      }
      for (std::size_t a = 0; a < m.in_index.size(); ++a) {
        std::size_t expected = a;
        if (prev != nullptr) {
          if (std::holds_alternative<layer::Conv2D>(full.kind) || full.in.height * full.in.width == 1) {
            expected = (*prev)[a];
          } else {
            const std::size_t pos = a / prev->size();
            expected = pos * full.in.channels + (*prev)[a % prev->size()];
          }
        }
        if (m.in_index[a] != expected) {
          add(blocks[b], who + " input map entry " + std::to_string(a) + " is wrong");
          break;
        }
      }
      const std::vector<std::size_t> expected_out =
          is_output ? iota_vector(output_units(full)) : plan.assignments[b].sets[j];
      if (m.out_index != expected_out) add(blocks[b], who + " output map is wrong");
      prev = is_output ? nullptr : &plan.assignments[b].sets[j];
    }
  }
  if (!out.empty()) return out;

  // Every hidden parameter belongs to at most one sub-model.
  for (std::size_t b = 0; b + 1 < blocks.size(); ++b) {
    const ResolvedLayer& full = spec.layer(blocks[b]);
    const std::size_t in_units = input_units(full);
    const std::size_t out_units = output_units(full);
    std::vector<unsigned char> owners(in_units * out_units, 0);
    for (std::size_t j = 0; j < plan.k; ++j) {
      const BlockMap& m = plan.index_maps[j][b];
      for (std::size_t a : m.in_index) {
        for (std::size_t o : m.out_index) {
          auto& count = owners[a * out_units + o];
          if (count < 2) ++count;
        }
      }
    }
    const bool shared_twice =
        std::any_of(owners.begin(), owners.end(), [](unsigned char c) { return c > 1; });
    if (shared_twice) {
      add(blocks[b], "a hidden parameter is allocated to more than one sub-model");
    }
  }

  // Normalization windows must stay inside one sub-model.
  const LayerAssignment* last = nullptr;
  for (std::size_t i = 0, h = 0; i < spec.layers().size(); ++i) {
    const ResolvedLayer& l = spec.layer(i);
    if (has_params(l.kind) && i != spec.output_layer()) last = &plan.assignments[h++];
    const auto* lrn = std::get_if<layer::Lrn>(&l.kind);
    if (lrn == nullptr || last == nullptr || plan.k == 1) continue;
    if (lrn->groups != plan.k) {
      add(i, lrn->groups == 1 ? "lrn couples sub-models and requires duplication"
                              : "lrn group count differs from K");
      continue;
    }
    std::vector<std::size_t> owner(l.in.channels);
    for (std::size_t j = 0; j < plan.k; ++j) {
      for (std::size_t c : last->sets[j]) owner[c] = j;
    }
    std::size_t start = 0;
    std::vector<bool> used(plan.k, false);
    for (std::size_t size : balanced_split(l.in.channels, lrn->groups)) {
      const std::size_t j = owner[start];
      bool ok = !used[j] && last->sets[j].size() == size;
      for (std::size_t c = start; c < start + size; ++c) ok = ok && owner[c] == j;
      if (!ok) add(i, "lrn window crosses sub-models");
      used[j] = true;
      start += size;
    }
  }
  return out;
}

std::vector<CoordinatePair> dropped_coordinates(const PartitionPlan& plan, std::size_t block) {
  const auto& blocks = plan.spec.param_layers();
  const ResolvedLayer& full = plan.spec.layer(blocks.at(block));
  const std::size_t in_units = input_units(full);
  const std::size_t out_units = output_units(full);
  std::vector<bool> covered(in_units * out_units, false);
  for (const auto& maps : plan.index_maps) {
    const BlockMap& m = maps.at(block);
    for (std::size_t a : m.in_index) {
      for (std::size_t o : m.out_index) covered[a * out_units + o] = true;
    }
  }
  std::vector<CoordinatePair> out;
  for (std::size_t a = 0; a < in_units; ++a) {
    for (std::size_t o = 0; o < out_units; ++o) {
      if (!covered[a * out_units + o]) out.push_back({a, o});
    }
  }
  return out;
}

}  // namespace partrain
