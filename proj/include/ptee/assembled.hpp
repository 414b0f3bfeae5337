#pragma once

#include <span>
#include <string>
#include <vector>

#include "ptee/branch.hpp"
#include "ptee/flops.hpp"
#include "ptee/network_graph.hpp"

namespace ptee {

// A frozen backbone with side branches attached at legal boundaries. The
// parameter store holds both subtrees; only "branch*" entries are trainable.
struct AssembledModel {
  NetworkGraph graph;
  ParameterStore params;
  std::vector<int> attach_points;        // strictly ascending legal boundaries
  std::vector<BranchSpec> branch_specs;  // one per attach point
  std::vector<BranchLayers> branches;    // built stacks, parallel to attach_points
  CostTable costs;

  int num_branches() const { return static_cast<int>(branches.size()); }
};

// Builds branch stacks at the given boundaries, initializes their parameters
// from `seed` (one independent stream per branch), freezes the backbone
// subtree, and derives the per-exit cost table. The backbone parameters are
// deep-copied so the caller's store stays untouched.
AssembledModel attach_branches(const NetworkGraph& graph, const ParameterStore& backbone_params,
                               std::span<const BranchSpec> specs, std::span<const int> attach_points,
                               std::uint64_t seed);

// Clone with fresh tensors; used by sweeps that train several copies from the
// same initialization.
AssembledModel clone_model(const AssembledModel& model);

// Checkpoint round trip. The descriptor stores the graph and the branch
// table; tensors round-trip bit-exactly.
void save_model(const std::string& path, const AssembledModel& model);
AssembledModel load_model(const std::string& path);

// Backbone-only checkpoints (pretraining output).
void save_backbone(const std::string& path, const NetworkGraph& graph, const ParameterStore& params);
std::pair<NetworkGraph, ParameterStore> load_backbone(const std::string& path);

}  // namespace ptee
