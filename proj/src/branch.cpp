#include "ptee/branch.hpp"

#include "ptee/errors.hpp"
#include "ptee/flops.hpp"
#include "ptee/ops.hpp"

namespace ptee {

BranchLayers build_branch(const BranchSpec& spec, const std::string& prefix, const nn::Shape& tap_shape) {
  if (spec.num_blocks < 1) throw Error("branch", "branch needs at least one conv block");
  if (spec.num_classes < 2) throw Error("branch", "branch needs at least 2 classes");
  if (tap_shape.size() != 4) {
    throw Error("branch", "attach point must be a [N,C,H,W] activation, got " + nn::shape_str(tap_shape));
  }

  const std::int64_t tap_channels = tap_shape[1];
  const std::int64_t width = spec.out_channels > 0 ? spec.out_channels : tap_channels;

  BranchLayers b;
  b.prefix = prefix;
  std::int64_t prev = tap_channels;
  for (int i = 0; i < spec.num_blocks; ++i) {
    b.trunk.push_back(conv_spec(prefix + ".conv" + std::to_string(i + 1), prev, width, 3, 1, 1));
    b.trunk.push_back(bn_spec(prefix + ".bn" + std::to_string(i + 1), width));
    b.trunk.push_back(relu_spec());
    prev = width;
  }
  b.trunk.push_back(avgpool_global_spec());
  b.class_head.push_back(linear_spec(prefix + ".fc", width, spec.num_classes));
  b.class_head.push_back(softmax_spec());
  b.conf_head.push_back(linear_spec(prefix + ".conf", width, 1));
  b.conf_head.push_back(sigmoid_spec());
  return b;
}

void init_branch_params(const BranchLayers& branch, ParameterStore& params, Rng& rng) {
  for (const auto& layer : branch.trunk) init_layer_params(layer, params, rng);
  for (const auto& layer : branch.class_head) init_layer_params(layer, params, rng);
  for (const auto& layer : branch.conf_head) init_layer_params(layer, params, rng);
  // The class head only receives gradient in proportion to the confidence, so
  // confidence starts optimistic (sigmoid(2) ~ 0.88). A zero start lets the
  // classification term drive h into sigmoid saturation before the classifier
  // has learned anything, and no gradient ever pulls it back out.
  auto bias = params.at(branch.prefix + ".conf.bias").values_mut();
  for (auto& v : bias) v = 2.0f;
}

std::int64_t branch_param_count(const BranchLayers& branch) {
  std::int64_t n = 0;
  for (const auto& layer : branch.trunk) n += layer_param_count(layer);
  for (const auto& layer : branch.class_head) n += layer_param_count(layer);
  for (const auto& layer : branch.conf_head) n += layer_param_count(layer);
  return n;
}

std::int64_t branch_head_flops(const BranchLayers& branch, const nn::Shape& tap_shape) {
  std::int64_t total = sequence_flops(branch.trunk, tap_shape);
  nn::Shape pooled = tap_shape;
  for (const auto& layer : branch.trunk) pooled = infer_output_shape(layer, pooled);
  total += sequence_flops(branch.class_head, pooled);
  total += sequence_flops(branch.conf_head, pooled);
  return total;
}

BranchOutput branch_forward(const BranchLayers& branch, const nn::Tensor& tap, ParameterStore& params,
                            const ForwardCtx& ctx) {
  nn::Tensor pooled = tap;
  for (const auto& layer : branch.trunk) pooled = forward(layer, pooled, params, ctx);
  nn::Tensor probs = pooled;
  for (const auto& layer : branch.class_head) probs = forward(layer, probs, params, ctx);
  nn::Tensor confidence = pooled;
  for (const auto& layer : branch.conf_head) confidence = forward(layer, confidence, params, ctx);
  return {std::move(confidence), std::move(probs)};
}

BranchOutput branch_forward(const BranchLayers& branch, const nn::Tensor& tap, ParameterStore& params,
                            bool training) {
  return branch_forward(branch, tap, params, ForwardCtx{training});
}

nlohmann::ordered_json branch_spec_to_json(const BranchSpec& spec) {
  nlohmann::ordered_json j;
  j["num_blocks"] = spec.num_blocks;
  j["out_channels"] = spec.out_channels;
  j["num_classes"] = spec.num_classes;
  return j;
}

BranchSpec branch_spec_from_json(const nlohmann::ordered_json& j) {
  BranchSpec s;
  s.num_blocks = j.at("num_blocks").get<int>();
  s.out_channels = j.at("out_channels").get<std::int64_t>();
  s.num_classes = j.at("num_classes").get<std::int64_t>();
  return s;
}

}  // namespace ptee
