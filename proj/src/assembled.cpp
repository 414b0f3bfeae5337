#include "ptee/assembled.hpp"

#include <algorithm>

#include "ptee/checkpoint.hpp"
#include "ptee/errors.hpp"
#include "ptee/zoo.hpp"

namespace ptee {

namespace {

// Rebuilds branch stacks and the cost table from graph + specs + boundaries.
void build_attachments(AssembledModel& model) {
  model.branches.clear();
  std::vector<std::int64_t> head_flops;
  for (std::size_t i = 0; i < model.attach_points.size(); ++i) {
    const auto tap = boundary_shape(model.graph, model.attach_points[i]);
    auto layers = build_branch(model.branch_specs[i], "branch" + std::to_string(i), tap);
    head_flops.push_back(branch_head_flops(layers, tap));
    model.branches.push_back(std::move(layers));
  }
  model.costs = segment_costs(model.graph, model.attach_points, head_flops);
}

}  // namespace

AssembledModel attach_branches(const NetworkGraph& graph, const ParameterStore& backbone_params,
                               std::span<const BranchSpec> specs, std::span<const int> attach_points,
                               std::uint64_t seed) {
  if (specs.size() != attach_points.size())
    throw Error("branch", "need one branch spec per attach point");
  if (specs.empty()) throw Error("branch", "need at least one branch");
  for (std::size_t i = 1; i < attach_points.size(); ++i) {
    if (attach_points[i] <= attach_points[i - 1])
      throw Error("branch", "attach points must be strictly ascending");
  }
  for (const auto& spec : specs) {
    if (spec.num_classes != graph.num_classes)
      throw Error("branch", "branch class count must match the backbone");
  }

  AssembledModel model;
  model.graph = graph;
  model.params = backbone_params.clone();
  model.attach_points.assign(attach_points.begin(), attach_points.end());
  model.branch_specs.assign(specs.begin(), specs.end());
  build_attachments(model);

  freeze_backbone(model.params);
  Rng rng(seed);
  for (std::size_t i = 0; i < model.branches.size(); ++i) {
    Rng branch_rng = rng.fork(static_cast<std::uint64_t>(i));
    init_branch_params(model.branches[i], model.params, branch_rng);
  }
  return model;
}

AssembledModel clone_model(const AssembledModel& model) {
  AssembledModel out;
  out.graph = model.graph;
  out.params = model.params.clone();
  out.attach_points = model.attach_points;
  out.branch_specs = model.branch_specs;
  out.branches = model.branches;
  out.costs = model.costs;
  return out;
}

void save_model(const std::string& path, const AssembledModel& model) {
  nlohmann::ordered_json desc;
  desc["kind"] = "early-exit-model";
  desc["graph"] = graph_to_json(model.graph);
  auto& branches = desc["branches"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < model.attach_points.size(); ++i) {
    nlohmann::ordered_json b = branch_spec_to_json(model.branch_specs[i]);
    b["attach"] = model.attach_points[i];
    branches.push_back(std::move(b));
  }
  save_checkpoint(path, desc, model.params);
}

AssembledModel load_model(const std::string& path) {
  auto loaded = load_checkpoint(path);
  if (!loaded.model.is_object() || loaded.model.value("kind", "") != "early-exit-model") {
    throw Error("checkpoint", "'" + path + "' does not hold an early-exit model");
  }
  AssembledModel model;
  model.graph = graph_from_json(loaded.model.at("graph"));
  for (const auto& b : loaded.model.at("branches")) {
    model.branch_specs.push_back(branch_spec_from_json(b));
    model.attach_points.push_back(b.at("attach").get<int>());
  }
  model.params = std::move(loaded.params);
  build_attachments(model);

  if (!model.params.all_frozen("backbone.")) {
    throw Error("checkpoint", "'" + path + "' backbone subtree is not frozen");
  }
  for (const auto& branch : model.branches) {
    for (const auto& layer : branch.trunk) {
      if (!layer.name.empty() && !model.params.has(layer.name + (layer.kind == LayerKind::conv2d ? ".weight" : ".gamma")))
        throw Error("checkpoint", "'" + path + "' is missing parameters for '" + layer.name + "'");
    }
  }
  return model;
}

void save_backbone(const std::string& path, const NetworkGraph& graph, const ParameterStore& params) {
  nlohmann::ordered_json desc;
  desc["kind"] = "backbone";
  desc["graph"] = graph_to_json(graph);
  save_checkpoint(path, desc, params);
}

std::pair<NetworkGraph, ParameterStore> load_backbone(const std::string& path) {
  auto loaded = load_checkpoint(path);
  if (!loaded.model.is_object() || loaded.model.value("kind", "") != "backbone") {
    throw Error("checkpoint", "'" + path + "' does not hold a backbone");
  }
  return {graph_from_json(loaded.model.at("graph")), std::move(loaded.params)};
}

}  // namespace ptee
