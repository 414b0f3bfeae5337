#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ptee/dataset.hpp"
#include "ptee/train.hpp"
#include "ptee/zoo.hpp"

namespace ptee {

// One experiment end to end: data, backbone, branch placement, branch
// training, and the exit policy. JSON round trip is strict: any key the
// schema does not define is rejected with its location.
struct ExperimentConfig {
  std::string arch = "resnet-style-8";
  std::int64_t num_classes = 10;
  nn::Shape input = {3, 16, 16};

  DatasetSource dataset;
  double validation_fraction = 0.1;
  std::uint64_t split_seed = 13;

  PretrainConfig pretrain;

  int branch_count = 3;
  std::string placement = "fine";
  int branch_blocks = 2;
  std::vector<std::int64_t> branch_channels;  // empty = attach-point widths; one value broadcasts
  std::uint64_t branch_seed = 5;

  TrainConfig train;

  std::vector<float> thresholds{0.5f};  // one value broadcasts to every branch

  // Per-branch channel list resolved against the number of branches.
  std::vector<std::int64_t> resolved_channels() const;
  std::vector<float> resolved_thresholds() const;
};

ExperimentConfig config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json config_to_json(const ExperimentConfig& config);

ExperimentConfig load_config(const std::string& path);
void save_config(const std::string& path, const ExperimentConfig& config);

}  // namespace ptee
