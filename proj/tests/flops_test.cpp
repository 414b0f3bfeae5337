#include <doctest.h>

#include <cstdint>
#include <string>
#include <vector>

#include "ptee/errors.hpp"
#include "ptee/flops.hpp"
#include "ptee/zoo.hpp"

using ptee::Error;

namespace {

std::int64_t conv_macs(std::int64_t c_in, std::int64_t c_out, std::int64_t k, std::int64_t h_out,
                       std::int64_t w_out) {
  return c_in * k * k * c_out * h_out * w_out;
}

// Closed-form cost of the 3-stage residual family at depth d on s x s input:
// stem conv, then (d-2)/6 two-conv blocks per stage at widths 16/32/64, the
// first block of stages 1 and 2 downsampling with a 1x1 projection shortcut.
std::int64_t residual_family_macs(int depth, std::int64_t c_in, std::int64_t s,
                                  std::int64_t classes) {
  const int per_stage = (depth - 2) / 6;
  std::int64_t total = conv_macs(c_in, 16, 3, s, s);
  std::int64_t prev = 16;
  std::int64_t side = s;
  for (int stage = 0; stage < 3; ++stage) {
    const std::int64_t width = 16 << stage;
    for (int k = 0; k < per_stage; ++k) {
      if (stage > 0 && k == 0) {
        side /= 2;
        total += conv_macs(prev, width, 3, side, side);   // strided conv1
        total += conv_macs(width, width, 3, side, side);  // conv2
        total += conv_macs(prev, width, 1, side, side);   // projection
      } else {
        total += 2 * conv_macs(width, width, 3, side, side);
      }
      prev = width;
    }
  }
  return total + 64 * classes;
}

std::int64_t vgg19_macs(std::int64_t c_in, std::int64_t s, std::int64_t classes) {
  struct Pair {
    std::int64_t width;
    bool pool;
  };
  const Pair plan[8] = {{64, true},   {128, true}, {256, false}, {256, true},
                        {512, false}, {512, true}, {512, false}, {512, true}};
  std::int64_t total = 0;
  std::int64_t prev = c_in;
  for (const auto& [width, pool] : plan) {
    total += conv_macs(prev, width, 3, s, s);
    total += conv_macs(width, width, 3, s, s);
    if (pool) s /= 2;
    prev = width;
  }
  return total + prev * classes;
}

std::int64_t densenet121_macs(std::int64_t c_in, std::int64_t s, std::int64_t classes) {
  constexpr std::int64_t growth = 32;
  constexpr std::int64_t bottleneck = 4 * growth;
  const int units[4] = {6, 12, 24, 16};
  std::int64_t total = conv_macs(c_in, 2 * growth, 3, s, s);
  std::int64_t channels = 2 * growth;
  for (int j = 0; j < 4; ++j) {
    for (int u = 0; u < units[j]; ++u) {
      total += conv_macs(channels, bottleneck, 1, s, s);
      total += conv_macs(bottleneck, growth, 3, s, s);
      channels += growth;
    }
    if (j < 3) {
      total += conv_macs(channels, channels / 2, 1, s, s);
      channels /= 2;
      s /= 2;
    }
  }
  return total + channels * classes;
}

}  // namespace

TEST_CASE("layer_flops counts convolution and linear multiply-accumulates only") {
  CHECK(ptee::layer_flops(ptee::conv_spec("c", 3, 16, 3, 1, 1), {1, 3, 32, 32}) == 442368);
  // Stride 2 shrinks the output plane the cost is charged at.
  CHECK(ptee::layer_flops(ptee::conv_spec("c", 16, 32, 3, 2, 1), {1, 16, 32, 32}) ==
        conv_macs(16, 32, 3, 16, 16));
  CHECK(ptee::layer_flops(ptee::conv_spec("c", 16, 32, 1, 1, 0), {1, 16, 8, 8}) ==
        16 * 32 * 64);
  // Bias does not change the count.
  CHECK(ptee::layer_flops(ptee::conv_spec("c", 3, 16, 3, 1, 1, true), {1, 3, 32, 32}) == 442368);

  CHECK(ptee::layer_flops(ptee::linear_spec("fc", 64, 10), {1, 64}) == 640);
  CHECK(ptee::layer_flops(ptee::linear_spec("fc", 64, 10, false), {1, 64}) == 640);

  CHECK(ptee::layer_flops(ptee::relu_spec(), {1, 16, 8, 8}) == 0);
  CHECK(ptee::layer_flops(ptee::maxpool_spec(2, 2), {1, 16, 8, 8}) == 0);
  CHECK(ptee::layer_flops(ptee::avgpool_global_spec(), {1, 16, 8, 8}) == 0);
  CHECK(ptee::layer_flops(ptee::bn_spec("bn", 16), {1, 16, 8, 8}) == 0);
  CHECK(ptee::layer_flops(ptee::softmax_spec(), {1, 10}) == 0);
  CHECK(ptee::layer_flops(ptee::sigmoid_spec(), {1, 1}) == 0);
}

TEST_CASE("sequence_flops folds shapes forward through the layers") {
  std::vector<ptee::LayerSpec> layers{
      ptee::conv_spec("a", 3, 8, 3, 1, 1),
      ptee::maxpool_spec(2, 2),
      ptee::conv_spec("b", 8, 16, 3, 1, 1),
  };
  // Second conv runs on the pooled 4x4 plane, not the 8x8 input.
  const std::int64_t expected = conv_macs(3, 8, 3, 8, 8) + conv_macs(8, 16, 3, 4, 4);
  CHECK(ptee::sequence_flops(layers, {1, 3, 8, 8}) == expected);
  CHECK(ptee::sequence_flops(std::span<const ptee::LayerSpec>{}, {1, 3, 8, 8}) == 0);
}

TEST_CASE("backbone totals match closed-form convolution arithmetic") {
  const auto r8 = ptee::build_backbone("resnet-style-8", 10, {3, 16, 16});
  CHECK(ptee::graph_total_flops(r8) == residual_family_macs(8, 3, 16, 10));
  CHECK(ptee::graph_total_flops(r8) == 3125888);

  const auto r110 = ptee::build_backbone("resnet-style-110", 10, {3, 32, 32});
  CHECK(ptee::graph_total_flops(r110) == residual_family_macs(110, 3, 32, 10));
  CHECK(ptee::graph_total_flops(r110) == 253149824);

  const auto vgg = ptee::build_backbone("vgg-style-19", 10, {3, 32, 32});
  CHECK(ptee::graph_total_flops(vgg) == vgg19_macs(3, 32, 10));
  CHECK(ptee::graph_total_flops(vgg) == 398136320);

  const auto dense = ptee::build_backbone("densenet-style-121", 10, {3, 32, 32});
  CHECK(ptee::graph_total_flops(dense) == densenet121_macs(3, 32, 10));
  CHECK(ptee::graph_total_flops(dense) == 888350720);
}

TEST_CASE("prefix_flops charges the work done before a boundary") {
  const auto r8 = ptee::build_backbone("resnet-style-8", 10, {3, 16, 16});
  const std::int64_t stem = conv_macs(3, 16, 3, 16, 16);
  const std::int64_t b0 = 2 * conv_macs(16, 16, 3, 16, 16);
  const std::int64_t b1 =
      conv_macs(16, 32, 3, 8, 8) + conv_macs(32, 32, 3, 8, 8) + conv_macs(16, 32, 1, 8, 8);
  CHECK(ptee::prefix_flops(r8, 0) == stem);
  CHECK(ptee::prefix_flops(r8, 1) == stem + b0);
  CHECK(ptee::prefix_flops(r8, 2) == stem + b0 + b1);
  CHECK_THROWS_AS(ptee::prefix_flops(r8, 3), Error);
  CHECK_THROWS_AS(ptee::prefix_flops(r8, -1), Error);

  const auto r110 = ptee::build_backbone("resnet-style-110", 10, {3, 32, 32});
  const auto total = ptee::graph_total_flops(r110);
  std::int64_t prev = -1;
  for (int boundary : ptee::legal_boundaries(r110)) {
    const auto p = ptee::prefix_flops(r110, boundary);
    CHECK(p > prev);
    CHECK(p < total);
    prev = p;
  }
}

TEST_CASE("segment_costs builds the per-exit price list with a main row") {
  const auto r8 = ptee::build_backbone("resnet-style-8", 10, {3, 16, 16});
  const std::vector<int> attach{0, 1, 2};
  const std::vector<std::int64_t> heads{1000, 2000, 3000};
  const auto table = ptee::segment_costs(r8, attach, heads);

  CHECK(table.backbone_total == 3125888);
  REQUIRE(table.exits() == 4);
  for (int i = 0; i < 3; ++i) {
    const auto& r = table.row(i);
    CHECK(r.attach_boundary == attach[i]);
    CHECK(r.backbone_flops == ptee::prefix_flops(r8, attach[i]));
    CHECK(r.branch_flops == heads[i]);
    CHECK(r.exit_flops == r.backbone_flops + r.branch_flops);
    CHECK(r.relative == doctest::Approx(static_cast<double>(r.exit_flops) / 3125888.0));
  }
  const auto& main = table.row(3);
  CHECK(main.attach_boundary == -1);
  CHECK(main.branch_flops == 0);
  CHECK(main.exit_flops == table.backbone_total);
  CHECK(main.relative == 1.0);
  CHECK(table.relative(0) < table.relative(1));
  CHECK_THROWS_AS(table.row(4), Error);

  CHECK_THROWS_AS(ptee::segment_costs(r8, attach, std::vector<std::int64_t>{1, 2}), Error);
  CHECK_THROWS_AS(ptee::segment_costs(r8, std::vector<int>{1, 0}, std::vector<std::int64_t>{1, 2}),
                  Error);
  // A huge early head makes exit 1 cheaper than exit 0.
  CHECK_THROWS_WITH_AS(
      ptee::segment_costs(r8, attach, std::vector<std::int64_t>{2000000, 2000, 3000}),
      doctest::Contains("strictly increasing"), Error);
  // A head pushing a branch exit past the full network cost breaks the table.
  CHECK_THROWS_AS(ptee::segment_costs(r8, attach, std::vector<std::int64_t>{1000, 2000, 999999999}),
                  Error);
}

TEST_CASE("distribution_targets produce the documented schedules") {
  const auto linear = ptee::distribution_targets("linear", 4);
  REQUIRE(linear.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(linear[i] == doctest::Approx((i + 1) / 5.0));

  const auto pareto = ptee::distribution_targets("pareto", 3);
  CHECK(pareto[0] == doctest::Approx(0.2));
  CHECK(pareto[1] == doctest::Approx(0.2 + 0.2 * 0.8));
  CHECK(pareto[2] == doctest::Approx(0.36 + 0.2 * 0.64));

  const auto golden = ptee::distribution_targets("golden", 2);
  CHECK(golden[0] == doctest::Approx(0.618));
  CHECK(golden[1] == doctest::Approx(0.618 + 0.618 * (1.0 - 0.618)));

  const auto fine = ptee::distribution_targets("fine", 10);
  for (int i = 0; i < 10; ++i) CHECK(fine[i] == doctest::Approx(0.05 + 0.04 * i));
  // Each schedule is strictly increasing and stays below the main cost.
  for (const auto* sched : {&linear, &pareto, &golden, &fine}) {
    for (std::size_t i = 1; i < sched->size(); ++i) CHECK((*sched)[i] > (*sched)[i - 1]);
    CHECK(sched->back() < 1.0);
  }

  CHECK_THROWS_AS(ptee::distribution_targets("linear", 0), Error);
  CHECK_THROWS_AS(ptee::distribution_targets("quadratic", 3), Error);
  // fine with 25 branches would ask for relative cost 1.01.
  CHECK_THROWS_WITH_AS(ptee::distribution_targets("fine", 25), doctest::Contains("below the main"),
                       Error);
}

TEST_CASE("place_branches snaps targets to the nearest free boundary") {
  const auto r110 = ptee::build_backbone("resnet-style-110", 10, {3, 32, 32});
  const auto fine = ptee::distribution_targets("fine", 10);
  const auto placed = ptee::place_branches(r110, fine);
  CHECK(placed == std::vector<int>{3, 5, 7, 9, 11, 13, 15, 18, 20, 22});

  const auto r8 = ptee::build_backbone("resnet-style-8", 10, {3, 16, 16});
  // Relative prefix costs on this net: 0.0354, 0.4128, 0.7063.
  CHECK(ptee::place_branches(r8, std::vector<double>{0.99}) == std::vector<int>{2});
  CHECK(ptee::place_branches(r8, std::vector<double>{0.05, 0.4}) == std::vector<int>{0, 1});
  // Both targets snap to boundary 0; the second advances to the next free one.
  CHECK(ptee::place_branches(r8, std::vector<double>{0.03, 0.04}) == std::vector<int>{0, 1});
  CHECK_THROWS_WITH_AS(ptee::place_branches(r8, std::vector<double>{0.01, 0.02, 0.03, 0.04}),
                       doctest::Contains("legal boundaries"), Error);
  // Targets past the last boundary collide and run off the top.
  CHECK_THROWS_WITH_AS(ptee::place_branches(r8, std::vector<double>{0.7, 0.71, 0.72}),
                       doctest::Contains("ran out of free boundaries"), Error);
}
