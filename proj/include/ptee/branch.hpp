#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ptee/network_graph.hpp"

namespace ptee {

// A side-exit head. The trunk is `num_blocks` conv3x3/bn/relu groups followed
// by global average pooling; two linear heads then produce class
// probabilities (softmax) and a scalar exit confidence (sigmoid).
struct BranchSpec {
  int num_blocks = 2;
  std::int64_t out_channels = 0;  // 0 = match the attach point's channel count
  std::int64_t num_classes = 0;
};

// Built layer stacks for one branch. Parameter names live under `prefix`
// ("<prefix>.conv1", "<prefix>.fc", "<prefix>.conf", ...).
struct BranchLayers {
  std::string prefix;
  std::vector<LayerSpec> trunk;       // conv/bn/relu groups + global avg pool
  std::vector<LayerSpec> class_head;  // linear -> softmax
  std::vector<LayerSpec> conf_head;   // linear -> sigmoid
};

// `tap_shape` is the [1,C,H,W] activation shape at the attach point.
BranchLayers build_branch(const BranchSpec& spec, const std::string& prefix, const nn::Shape& tap_shape);

void init_branch_params(const BranchLayers& branch, ParameterStore& params, Rng& rng);
std::int64_t branch_param_count(const BranchLayers& branch);

// MAC cost of running the branch head once (same counting convention as the
// backbone analyzer).
std::int64_t branch_head_flops(const BranchLayers& branch, const nn::Shape& tap_shape);

struct BranchOutput {
  nn::Tensor confidence;  // [N,1] in (0,1)
  nn::Tensor probs;       // [N,K] rows on the simplex
};

BranchOutput branch_forward(const BranchLayers& branch, const nn::Tensor& tap, ParameterStore& params,
                            bool training);
BranchOutput branch_forward(const BranchLayers& branch, const nn::Tensor& tap, ParameterStore& params,
                            const ForwardCtx& ctx);

nlohmann::ordered_json branch_spec_to_json(const BranchSpec& spec);
BranchSpec branch_spec_from_json(const nlohmann::ordered_json& j);

}  // namespace ptee
