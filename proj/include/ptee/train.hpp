#pragma once

#include <span>
#include <string>
#include <vector>

#include "ptee/assembled.hpp"
#include "ptee/dataset.hpp"

namespace ptee {

struct TrainConfig {
  int epochs = 12;
  int batch_size = 32;
  float learning_rate = 0.05f;
  float momentum = 0.9f;
  float lambda = 0.9f;                       // weight of the expected-cost term
  std::string cost_recursion = "recursive";  // "recursive" or "literal"
  std::uint64_t seed = 11;
};

// Training targets are the backbone's own predictions (argmax over its
// softmax output, ties resolved to the lowest class index). True labels are
// never consulted.
std::vector<std::int64_t> pseudo_labels(const nn::Tensor& backbone_probs);

// Soft composite prediction seen from each branch, built from the deepest
// exit backwards:
//   P_n = h_n * y_n + (1 - h_n) * P_{n+1},   P_N = main classifier output
// Every row stays on the probability simplex.
std::vector<nn::Tensor> cumulative_predictions(std::span<const nn::Tensor> confidence,
                                               std::span<const nn::Tensor> probs,
                                               const nn::Tensor& main_probs);

// Expected relative cost seen from each branch. `exit_costs` has one entry
// per branch plus the trailing main cost (1.0).
//   recursive: C_n = h_n * c_n + (1 - h_n) * C_{n+1},  C_N = 1
//   literal:   C_n = h_n * c_n + (1 - h_n) * c_{n+1}
std::vector<nn::Tensor> cumulative_costs(std::span<const nn::Tensor> confidence,
                                         std::span<const double> exit_costs,
                                         const std::string& recursion);

struct LossBreakdown {
  nn::Tensor total;                     // differentiable scalar
  std::vector<double> ce_per_branch;    // batch-mean cross entropy of each composite
  std::vector<double> cost_per_branch;  // batch-mean expected cost
  std::vector<double> mean_confidence;  // batch-mean h_n
  double ce_sum = 0.0;
  double cost_sum = 0.0;  // unweighted; the total applies lambda
};

// total = sum over branches of CE(pseudo, P_n) + lambda * mean(C_n)
LossBreakdown total_loss(std::span<const nn::Tensor> confidence, std::span<const nn::Tensor> probs,
                         const nn::Tensor& main_probs, const std::vector<std::int64_t>& pseudo,
                         std::span<const double> exit_costs, float lambda,
                         const std::string& recursion);

struct TrainEpochStats {
  int epoch = 0;
  double total_loss = 0.0;
  double ce_sum = 0.0;
  double cost_sum = 0.0;
  std::vector<double> mean_confidence;
  std::vector<double> ce_per_branch;
  std::vector<double> cost_per_branch;
};

// Trains only the branch heads against cached backbone outputs. The backbone
// must already be frozen; its taps and pseudo labels are computed once up
// front. A non-finite loss or gradient restores the epoch-start parameters
// and aborts with an Error.
std::vector<TrainEpochStats> train_branches(AssembledModel& model, const Dataset& data,
                                            const TrainConfig& config);

void write_training_csv(const std::string& path, std::span<const TrainEpochStats> stats);

}  // namespace ptee
