#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptee/layer_spec.hpp"
#include "ptee/param_store.hpp"

namespace ptee {

enum class BlockKind { plain, residual, dense };

// One logic basic block. Interpretation by kind:
//  - plain:    `layers` run in sequence;
//  - residual: `layers` form the main path, `shortcut` the projection
//              (empty shortcut = identity), output relu(main + shortcut);
//  - dense:    each unit in `dense_units` maps the running tensor to a new
//              feature map that is concatenated onto it; `transition`
//              (possibly empty) then runs in sequence.
struct BasicBlock {
  BlockKind kind = BlockKind::plain;
  std::vector<LayerSpec> layers;
  std::vector<LayerSpec> shortcut;
  std::vector<std::vector<LayerSpec>> dense_units;
  std::vector<LayerSpec> transition;
};

// Backbone structure: stem -> basic blocks -> classifier (ends in softmax).
// input_shape is [C,H,W]; shapes elsewhere carry a leading batch dim.
struct NetworkGraph {
  std::string arch;  // descriptive name, e.g. "resnet-style-8"
  nn::Shape input_shape;
  std::int64_t num_classes = 0;
  std::vector<LayerSpec> stem;
  std::vector<BasicBlock> blocks;
  std::vector<LayerSpec> classifier;
};

// Branch attach boundaries. Boundary j means "after the first j basic
// blocks"; j = 0 (right after the stem) is legal only when the stem is
// non-empty, and there is no boundary after the last block.
std::vector<int> legal_boundaries(const NetworkGraph& graph);

// Shape [1,C,H,W] of the activation at a boundary.
nn::Shape boundary_shape(const NetworkGraph& graph, int boundary);

// Walks every layer in execution order, reporting the input shape each layer
// sees (batch dim 1). Shared by shape validation and the cost analyzer so
// both always agree.
void for_each_layer(const NetworkGraph& graph,
                    const std::function<void(const LayerSpec&, const nn::Shape&)>& fn);

// Walks only the layers executed before a boundary: the stem plus the first
// `boundary` basic blocks.
void for_each_prefix_layer(const NetworkGraph& graph, int boundary,
                           const std::function<void(const LayerSpec&, const nn::Shape&)>& fn);

// Validates the shape chain end to end; throws Error on the first mismatch.
void validate_graph(const NetworkGraph& graph);

// Creates every backbone parameter under "backbone." in deterministic order.
void init_backbone_params(const NetworkGraph& graph, ParameterStore& params, Rng& rng);

struct BackboneResult {
  nn::Tensor probs;               // [N,K] classifier output
  std::vector<nn::Tensor> taps;   // activations at the requested boundaries
};

// Runs the backbone on [N,C,H,W] input, capturing activations at the given
// ascending boundaries. `training` selects batchnorm mode (frozen layers
// stay in inference mode regardless).
BackboneResult backbone_forward(const NetworkGraph& graph, ParameterStore& params, const nn::Tensor& x,
                                std::span<const int> tap_boundaries, bool training);
BackboneResult backbone_forward(const NetworkGraph& graph, ParameterStore& params, const nn::Tensor& x,
                                std::span<const int> tap_boundaries, const ForwardCtx& ctx);

// Runs blocks [first_block, last_block) on an activation; used by the
// early-exit inference path to resume execution between boundaries.
nn::Tensor run_blocks(const NetworkGraph& graph, ParameterStore& params, const nn::Tensor& x, int first_block,
                      int last_block, bool training);
nn::Tensor run_blocks(const NetworkGraph& graph, ParameterStore& params, const nn::Tensor& x, int first_block,
                      int last_block, const ForwardCtx& ctx);
nn::Tensor run_stem(const NetworkGraph& graph, ParameterStore& params, const nn::Tensor& x, bool training);
nn::Tensor run_classifier(const NetworkGraph& graph, ParameterStore& params, const nn::Tensor& x, bool training);

nlohmann::ordered_json graph_to_json(const NetworkGraph& graph);
NetworkGraph graph_from_json(const nlohmann::ordered_json& j);

}  // namespace ptee
