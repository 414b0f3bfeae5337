#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptee/dataset.hpp"
#include "ptee/network_graph.hpp"

namespace ptee {

// Supported architectures:
//   plain-cnn-small   fixed 4-block conv/bn/relu stack (desk scale)
//   resnet-style-<d>  (d-2)/2 residual basic blocks in 3 widening stages;
//                     d in {8, 20, 32, 110} and any other d with
//                     (d-2) % 6 == 0
//   vgg-style-19      conv-pair sub-blocks with stage-end max pooling
//   densenet-style-121  growth-32 dense blocks [6,12,24,16] + transitions
NetworkGraph build_backbone(const std::string& arch, std::int64_t num_classes, nn::Shape input_chw);

struct PretrainConfig {
  int epochs = 8;
  int batch_size = 32;
  float learning_rate = 0.05f;
  float momentum = 0.9f;
  std::uint64_t seed = 3;
};

struct PretrainEpoch {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // against the dataset's true labels
};

// Supervised cross-entropy training of a backbone. Returns per-epoch stats;
// zero epochs returns an empty vector and leaves parameters untouched.
// Divergence (non-finite loss) aborts with an Error. Ends with a batchnorm
// recalibration pass so inference-mode statistics match the final weights.
std::vector<PretrainEpoch> pretrain(const NetworkGraph& graph, ParameterStore& params, const Dataset& data,
                                    const PretrainConfig& config);

// Replaces batchnorm running statistics with the exact average of per-batch
// statistics under the current weights (one forward pass, no updates to
// trainable parameters). Training leaves the running estimates lagging the
// weights they serve; this closes that gap. Frozen batchnorm is untouched.
void recalibrate_batchnorm(const NetworkGraph& graph, ParameterStore& params, const Dataset& data, int batch_size);

// Marks the whole backbone subtree frozen. Idempotent.
void freeze_backbone(ParameterStore& params);

// Classification accuracy of the backbone on a dataset (against true labels).
double backbone_accuracy(const NetworkGraph& graph, ParameterStore& params, const Dataset& data);

}  // namespace ptee
