#include "ptee/flops.hpp"

#include <algorithm>
#include <cmath>

#include "ptee/errors.hpp"

namespace ptee {

std::int64_t layer_flops(const LayerSpec& layer, const nn::Shape& input) {
  switch (layer.kind) {
    case LayerKind::conv2d: {
      const auto out = infer_output_shape(layer, input);
      const std::int64_t k2 = static_cast<std::int64_t>(layer.kernel) * layer.kernel;
      return layer.in_channels * k2 * layer.out_channels * out[2] * out[3];
    }
    case LayerKind::linear:
      return layer.in_features * layer.out_features;
    default:
      return 0;
  }
}

std::int64_t sequence_flops(std::span<const LayerSpec> layers, nn::Shape input) {
  std::int64_t total = 0;
  for (const auto& layer : layers) {
    total += layer_flops(layer, input);
    input = infer_output_shape(layer, input);
  }
  return total;
}

std::int64_t graph_total_flops(const NetworkGraph& graph) {
  std::int64_t total = 0;
  for_each_layer(graph, [&total](const LayerSpec& layer, const nn::Shape& in) {
    total += layer_flops(layer, in);
  });
  return total;
}

std::int64_t prefix_flops(const NetworkGraph& graph, int boundary) {
  std::int64_t total = 0;
  for_each_prefix_layer(graph, boundary, [&total](const LayerSpec& layer, const nn::Shape& in) {
    total += layer_flops(layer, in);
  });
  return total;
}

const CostRow& CostTable::row(int exit_index) const {
  for (const auto& r : rows) {
    if (r.exit_index == exit_index) return r;
  }
  throw Error("flops", "no cost row for exit " + std::to_string(exit_index));
}

CostTable segment_costs(const NetworkGraph& graph, std::span<const int> attach_boundaries,
                        std::span<const std::int64_t> branch_head_flops) {
  if (attach_boundaries.size() != branch_head_flops.size())
    throw Error("flops", "need one branch cost per attach boundary");
  for (std::size_t i = 1; i < attach_boundaries.size(); ++i) {
    if (attach_boundaries[i] <= attach_boundaries[i - 1])
      throw Error("flops", "attach boundaries must be strictly ascending");
  }

  CostTable table;
  table.backbone_total = graph_total_flops(graph);
  for (std::size_t i = 0; i < attach_boundaries.size(); ++i) {
    CostRow r;
    r.exit_index = static_cast<int>(i);
    r.attach_boundary = attach_boundaries[i];
    r.backbone_flops = prefix_flops(graph, attach_boundaries[i]);
    r.branch_flops = branch_head_flops[i];
    r.exit_flops = r.backbone_flops + r.branch_flops;
    r.relative = static_cast<double>(r.exit_flops) / static_cast<double>(table.backbone_total);
    table.rows.push_back(r);
  }
  CostRow main;
  main.exit_index = static_cast<int>(attach_boundaries.size());
  main.attach_boundary = -1;
  main.backbone_flops = table.backbone_total;
  main.branch_flops = 0;
  main.exit_flops = table.backbone_total;
  main.relative = 1.0;
  table.rows.push_back(main);

  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    if (table.rows[i].relative <= table.rows[i - 1].relative) {
      throw Error("flops", "exit costs must be strictly increasing: exit " + std::to_string(i - 1) +
                               " costs " + std::to_string(table.rows[i - 1].relative) + ", exit " +
                               std::to_string(i) + " costs " + std::to_string(table.rows[i].relative));
    }
  }
  return table;
}

std::vector<double> distribution_targets(const std::string& method, int count) {
  if (count < 1) throw Error("flops", "branch count must be positive");
  std::vector<double> t(static_cast<std::size_t>(count));
  if (method == "linear") {
    for (int i = 0; i < count; ++i) t[i] = static_cast<double>(i + 1) / (count + 1);
  } else if (method == "pareto" || method == "golden") {
    const double step = method == "pareto" ? 0.2 : 0.618;
    double cur = 0.0;
    for (int i = 0; i < count; ++i) {
      cur += step * (1.0 - cur);
      t[i] = cur;
    }
  } else if (method == "fine") {
    for (int i = 0; i < count; ++i) t[i] = 0.05 + 0.04 * i;
  } else {
    throw Error("flops", "unknown placement method '" + method + "'");
  }
  if (t.back() >= 1.0) {
    throw Error("flops", "placement targets must stay below the main cost; " + method + " with " +
                             std::to_string(count) + " branches reaches " + std::to_string(t.back()));
  }
  return t;
}

std::vector<int> place_branches(const NetworkGraph& graph, std::span<const double> targets) {
  const auto legal = legal_boundaries(graph);
  if (targets.size() > legal.size()) {
    throw Error("flops", "graph has " + std::to_string(legal.size()) + " legal boundaries, cannot place " +
                             std::to_string(targets.size()) + " branches");
  }
  const auto total = static_cast<double>(graph_total_flops(graph));
  std::vector<double> rel(legal.size());
  for (std::size_t j = 0; j < legal.size(); ++j) {
    rel[j] = static_cast<double>(prefix_flops(graph, legal[j])) / total;
  }

  std::vector<bool> taken(legal.size(), false);
  std::vector<int> out;
  out.reserve(targets.size());
  for (const double target : targets) {
    std::size_t best = 0;
    double best_d = std::abs(rel[0] - target);
    for (std::size_t j = 1; j < legal.size(); ++j) {
      const double d = std::abs(rel[j] - target);
      if (d < best_d) {
        best = j;
        best_d = d;
      }
    }
    while (best < legal.size() && taken[best]) ++best;
    if (best == legal.size()) {
      throw Error("flops", "ran out of free boundaries above target " + std::to_string(target));
    }
    taken[best] = true;
    out.push_back(legal[best]);
  }
  return out;
}

}  // namespace ptee
