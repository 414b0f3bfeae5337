#pragma once

#include <span>
#include <string>
#include <vector>

#include "ptee/network_graph.hpp"

namespace ptee {

// Multiply-accumulate counting convention:
//   conv2d   C_in * k^2 * C_out * H_out * W_out
//   linear   in_features * out_features
//   relu, pooling, batchnorm, softmax, sigmoid count 0
// Bias additions are ignored. `input` carries a leading batch dim of 1.
std::int64_t layer_flops(const LayerSpec& layer, const nn::Shape& input);

// Sums a layer sequence, folding shapes forward.
std::int64_t sequence_flops(std::span<const LayerSpec> layers, nn::Shape input);

// Full backbone: stem + blocks + classifier.
std::int64_t graph_total_flops(const NetworkGraph& graph);

// Stem plus the first `boundary` blocks (the work done before exiting there).
std::int64_t prefix_flops(const NetworkGraph& graph, int boundary);

// One exit's cost line. Branch exits come first in attach order; the final
// row (attach_boundary -1) is the unmodified main classifier.
struct CostRow {
  int exit_index = 0;
  int attach_boundary = -1;
  std::int64_t backbone_flops = 0;  // backbone work up to this exit (full net for main)
  std::int64_t branch_flops = 0;    // the branch head itself, 0 for main
  std::int64_t exit_flops = 0;      // backbone_flops + branch_flops
  double relative = 0.0;            // exit_flops / full backbone cost
};

struct CostTable {
  std::int64_t backbone_total = 0;
  std::vector<CostRow> rows;  // branch exits in attach order, then the main row

  int exits() const { return static_cast<int>(rows.size()); }  // main included
  const CostRow& row(int exit_index) const;
  double relative(int exit_index) const { return row(exit_index).relative; }
};

// Builds the per-exit cost table for branch heads costing
// `branch_head_flops[i]` attached at strictly ascending boundaries. Throws
// when the resulting exit costs are not strictly increasing or a branch exit
// reaches the main cost; every consumer assumes that invariant.
CostTable segment_costs(const NetworkGraph& graph, std::span<const int> attach_boundaries,
                        std::span<const std::int64_t> branch_head_flops);

// Placement target schedules over relative cost in (0, 1):
//   linear   (i+1)/(count+1)
//   pareto   0.2 of the remaining headroom each step, starting from 0
//   golden   0.618 of the remaining headroom each step, starting from 0
//   fine     0.05 + 0.04 * i
std::vector<double> distribution_targets(const std::string& method, int count);

// Snaps each target to the legal boundary whose relative prefix cost is
// nearest (ties pick the smaller boundary); a boundary already taken advances
// to the next free one upward. Throws when the graph runs out of boundaries.
std::vector<int> place_branches(const NetworkGraph& graph, std::span<const double> targets);

}  // namespace ptee
