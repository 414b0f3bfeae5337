#include "ptee/network_graph.hpp"

#include "ptee/ops.hpp"

namespace ptee {

namespace {

nn::Shape walk_layers(const std::vector<LayerSpec>& layers, nn::Shape shape,
                      const std::function<void(const LayerSpec&, const nn::Shape&)>& fn) {
  for (const auto& layer : layers) {
    fn(layer, shape);
    shape = infer_output_shape(layer, shape);
  }
  return shape;
}

// Input shape -> output shape of one block, reporting layers along the way.
nn::Shape walk_block(const BasicBlock& block, const nn::Shape& input,
                     const std::function<void(const LayerSpec&, const nn::Shape&)>& fn) {
  switch (block.kind) {
    case BlockKind::plain:
      return walk_layers(block.layers, input, fn);
    case BlockKind::residual: {
      nn::Shape main = walk_layers(block.layers, input, fn);
      nn::Shape side = block.shortcut.empty() ? input : walk_layers(block.shortcut, input, fn);
      if (main != side)
        throw Error("shape", "residual block: main path " + nn::shape_str(main) + " vs shortcut " +
                                 nn::shape_str(side));
      return main;
    }
    case BlockKind::dense: {
      nn::Shape running = input;
      for (const auto& unit : block.dense_units) {
        nn::Shape produced = walk_layers(unit, running, fn);
        if (produced.size() != 4 || produced[0] != running[0] || produced[2] != running[2] ||
            produced[3] != running[3])
          throw Error("shape", "dense unit must preserve spatial size, got " + nn::shape_str(produced));
        running[1] += produced[1];
      }
      return walk_layers(block.transition, running, fn);
    }
  }
  throw Error("graph", "unreachable block kind");
}

nn::Tensor fold_layers(const std::vector<LayerSpec>& layers, nn::Tensor x, ParameterStore& params,
                       const ForwardCtx& ctx) {
  for (const auto& layer : layers) x = forward(layer, x, params, ctx);
  return x;
}

nn::Tensor run_block(const BasicBlock& block, nn::Tensor x, ParameterStore& params, const ForwardCtx& ctx) {
  switch (block.kind) {
    case BlockKind::plain:
      return fold_layers(block.layers, std::move(x), params, ctx);
    case BlockKind::residual: {
      nn::Tensor main = fold_layers(block.layers, x, params, ctx);
      nn::Tensor side = block.shortcut.empty() ? x : fold_layers(block.shortcut, x, params, ctx);
      return nn::relu(nn::add(main, side));
    }
    case BlockKind::dense: {
      nn::Tensor running = std::move(x);
      for (const auto& unit : block.dense_units) {
        nn::Tensor produced = fold_layers(unit, running, params, ctx);
        running = nn::concat_channels(running, produced);
      }
      return fold_layers(block.transition, std::move(running), params, ctx);
    }
  }
  throw Error("graph", "unreachable block kind");
}

void collect_block_layers(const BasicBlock& block, std::vector<const LayerSpec*>& out) {
  auto push = [&out](const std::vector<LayerSpec>& v) {
    for (const auto& l : v) out.push_back(&l);
  };
  push(block.layers);
  push(block.shortcut);
  for (const auto& unit : block.dense_units) push(unit);
  push(block.transition);
}

}  // namespace

std::vector<int> legal_boundaries(const NetworkGraph& graph) {
  std::vector<int> out;
  if (!graph.stem.empty()) out.push_back(0);
  for (int j = 1; j < static_cast<int>(graph.blocks.size()); ++j) out.push_back(j);
  return out;
}

void for_each_layer(const NetworkGraph& graph,
                    const std::function<void(const LayerSpec&, const nn::Shape&)>& fn) {
  nn::Shape shape{1, graph.input_shape[0], graph.input_shape[1], graph.input_shape[2]};
  shape = walk_layers(graph.stem, shape, fn);
  for (const auto& block : graph.blocks) shape = walk_block(block, shape, fn);
  walk_layers(graph.classifier, shape, fn);
}

void for_each_prefix_layer(const NetworkGraph& graph, int boundary,
                           const std::function<void(const LayerSpec&, const nn::Shape&)>& fn) {
  const auto legal = legal_boundaries(graph);
  if (std::find(legal.begin(), legal.end(), boundary) == legal.end())
    throw Error("graph", "boundary " + std::to_string(boundary) + " is not a legal attach point");
  nn::Shape shape{1, graph.input_shape[0], graph.input_shape[1], graph.input_shape[2]};
  shape = walk_layers(graph.stem, shape, fn);
  for (int j = 0; j < boundary; ++j) shape = walk_block(graph.blocks[j], shape, fn);
}

nn::Shape boundary_shape(const NetworkGraph& graph, int boundary) {
  const auto legal = legal_boundaries(graph);
  if (std::find(legal.begin(), legal.end(), boundary) == legal.end())
    throw Error("graph", "boundary " + std::to_string(boundary) + " is not a legal attach point");
  nn::Shape shape{1, graph.input_shape[0], graph.input_shape[1], graph.input_shape[2]};
  auto nop = [](const LayerSpec&, const nn::Shape&) {};
  shape = walk_layers(graph.stem, shape, nop);
  for (int j = 0; j < boundary; ++j) shape = walk_block(graph.blocks[j], shape, nop);
  return shape;
}

void validate_graph(const NetworkGraph& graph) {
  if (graph.input_shape.size() != 3) throw Error("graph", "input_shape must be [C,H,W]");
  if (graph.num_classes < 2) throw Error("graph", "num_classes must be at least 2");
  if (graph.blocks.empty()) throw Error("graph", "graph needs at least one basic block");
  if (graph.classifier.empty() || graph.classifier.back().kind != LayerKind::softmax)
    throw Error("graph", "classifier must end in softmax");
  nn::Shape out;
  auto nop = [](const LayerSpec&, const nn::Shape&) {};
  nn::Shape shape{1, graph.input_shape[0], graph.input_shape[1], graph.input_shape[2]};
  shape = walk_layers(graph.stem, shape, nop);
  for (const auto& block : graph.blocks) shape = walk_block(block, shape, nop);
  out = walk_layers(graph.classifier, shape, nop);
  if (out.size() != 2 || out[1] != graph.num_classes)
    throw Error("graph", "classifier output " + nn::shape_str(out) + " does not match num_classes " +
                             std::to_string(graph.num_classes));
}

void init_backbone_params(const NetworkGraph& graph, ParameterStore& params, Rng& rng) {
  for (const auto& layer : graph.stem) init_layer_params(layer, params, rng);
  for (const auto& block : graph.blocks) {
    std::vector<const LayerSpec*> layers;
    collect_block_layers(block, layers);
    for (const auto* layer : layers) init_layer_params(*layer, params, rng);
  }
  for (const auto& layer : graph.classifier) init_layer_params(layer, params, rng);
}

nn::Tensor run_stem(const NetworkGraph& graph, ParameterStore& params, const nn::Tensor& x, bool training) {
  return fold_layers(graph.stem, x, params, ForwardCtx{training});
}

nn::Tensor run_blocks(const NetworkGraph& graph, ParameterStore& params, const nn::Tensor& x, int first_block,
                      int last_block, const ForwardCtx& ctx) {
  if (first_block < 0 || last_block > static_cast<int>(graph.blocks.size()) || first_block > last_block)
    throw Error("graph", "block range [" + std::to_string(first_block) + ", " + std::to_string(last_block) +
                             ") out of bounds");
  nn::Tensor out = x;
  for (int j = first_block; j < last_block; ++j)
    out = run_block(graph.blocks[j], std::move(out), params, ctx);
  return out;
}

nn::Tensor run_blocks(const NetworkGraph& graph, ParameterStore& params, const nn::Tensor& x, int first_block,
                      int last_block, bool training) {
  return run_blocks(graph, params, x, first_block, last_block, ForwardCtx{training});
}

nn::Tensor run_classifier(const NetworkGraph& graph, ParameterStore& params, const nn::Tensor& x, bool training) {
  return fold_layers(graph.classifier, x, params, ForwardCtx{training});
}

BackboneResult backbone_forward(const NetworkGraph& graph, ParameterStore& params, const nn::Tensor& x,
                                std::span<const int> tap_boundaries, const ForwardCtx& ctx) {
  for (std::size_t i = 1; i < tap_boundaries.size(); ++i)
    if (tap_boundaries[i] <= tap_boundaries[i - 1])
      throw Error("graph", "tap boundaries must be strictly ascending");
  const auto legal = legal_boundaries(graph);
  for (int b : tap_boundaries)
    if (std::find(legal.begin(), legal.end(), b) == legal.end())
      throw Error("graph", "tap boundary " + std::to_string(b) + " is not a legal attach point");

  BackboneResult result;
  nn::Tensor cur = fold_layers(graph.stem, x, params, ctx);
  std::size_t next_tap = 0;
  if (next_tap < tap_boundaries.size() && tap_boundaries[next_tap] == 0) {
    result.taps.push_back(cur);
    ++next_tap;
  }
  for (int j = 0; j < static_cast<int>(graph.blocks.size()); ++j) {
    cur = run_block(graph.blocks[j], std::move(cur), params, ctx);
    if (next_tap < tap_boundaries.size() && tap_boundaries[next_tap] == j + 1) {
      result.taps.push_back(cur);
      ++next_tap;
    }
  }
  result.probs = fold_layers(graph.classifier, cur, params, ctx);
  return result;
}

BackboneResult backbone_forward(const NetworkGraph& graph, ParameterStore& params, const nn::Tensor& x,
                                std::span<const int> tap_boundaries, bool training) {
  return backbone_forward(graph, params, x, tap_boundaries, ForwardCtx{training});
}

nlohmann::ordered_json graph_to_json(const NetworkGraph& graph) {
  auto layers_json = [](const std::vector<LayerSpec>& v) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& l : v) arr.push_back(layer_to_json(l));
    return arr;
  };
  nlohmann::ordered_json j;
  j["arch"] = graph.arch;
  j["input_shape"] = graph.input_shape;
  j["num_classes"] = graph.num_classes;
  j["stem"] = layers_json(graph.stem);
  nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
  for (const auto& block : graph.blocks) {
    nlohmann::ordered_json b;
    b["kind"] = block.kind == BlockKind::plain ? "plain" : block.kind == BlockKind::residual ? "residual" : "dense";
    b["layers"] = layers_json(block.layers);
    if (!block.shortcut.empty()) b["shortcut"] = layers_json(block.shortcut);
    if (!block.dense_units.empty()) {
      nlohmann::ordered_json units = nlohmann::ordered_json::array();
      for (const auto& unit : block.dense_units) units.push_back(layers_json(unit));
      b["dense_units"] = units;
    }
    if (!block.transition.empty()) b["transition"] = layers_json(block.transition);
    blocks.push_back(std::move(b));
  }
  j["blocks"] = std::move(blocks);
  j["classifier"] = layers_json(graph.classifier);
  return j;
}

NetworkGraph graph_from_json(const nlohmann::ordered_json& j) {
  auto layers_from = [](const nlohmann::ordered_json& arr) {
    std::vector<LayerSpec> out;
    for (const auto& lj : arr) out.push_back(layer_from_json(lj));
    return out;
  };
  NetworkGraph g;
  g.arch = j.at("arch").get<std::string>();
  g.input_shape = j.at("input_shape").get<nn::Shape>();
  g.num_classes = j.at("num_classes").get<std::int64_t>();
  g.stem = layers_from(j.at("stem"));
  for (const auto& bj : j.at("blocks")) {
    BasicBlock b;
    const std::string kind = bj.at("kind").get<std::string>();
    if (kind == "plain")
      b.kind = BlockKind::plain;
    else if (kind == "residual")
      b.kind = BlockKind::residual;
    else if (kind == "dense")
      b.kind = BlockKind::dense;
    else
      throw Error("graph", "unknown block kind '" + kind + "'");
    b.layers = layers_from(bj.at("layers"));
    if (bj.contains("shortcut")) b.shortcut = layers_from(bj.at("shortcut"));
    if (bj.contains("dense_units"))
      for (const auto& uj : bj.at("dense_units")) b.dense_units.push_back(layers_from(uj));
    if (bj.contains("transition")) b.transition = layers_from(bj.at("transition"));
    g.blocks.push_back(std::move(b));
  }
  g.classifier = layers_from(j.at("classifier"));
  validate_graph(g);
  return g;
}

}  // namespace ptee
