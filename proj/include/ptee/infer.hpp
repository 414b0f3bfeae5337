#pragma once

#include <span>
#include <vector>

#include "ptee/assembled.hpp"
#include "ptee/dataset.hpp"

namespace ptee {

// Per-branch exit thresholds. A sample leaves at the first branch in attach
// order whose confidence reaches its threshold; otherwise it runs to the
// main classifier.
struct ExitPolicy {
  std::vector<float> thresholds;

  static ExitPolicy uniform(int branches, float threshold) {
    return {std::vector<float>(static_cast<std::size_t>(branches), threshold)};
  }
};

struct InferenceTrace {
  int exit_index = 0;               // == branch count means the main exit
  std::int64_t predicted_class = 0;
  float confidence_at_exit = 1.0f;  // branch confidence; the main exit reports 1
  std::int64_t flops_consumed = 0;  // cost-table work of the exit taken
  std::int64_t flops_charged = 0;   // consumed + earlier branch heads that ran
  double relative_consumed = 0.0;
  double relative_charged = 0.0;    // exceeds 1 when every branch ran and none fired
};

// Sequential per-sample pass: runs backbone segments between attach points,
// evaluates each branch as it is reached, and stops at the first confident
// one. `x` is a single [1,C,H,W] sample.
InferenceTrace infer_one(AssembledModel& model, const nn::Tensor& x, const ExitPolicy& policy);

struct EvalReport {
  std::size_t count = 0;
  double accuracy_vs_pseudo = 0.0;  // against the backbone's own predictions
  double accuracy_vs_true = -1.0;   // against dataset labels; -1 when absent
  double avg_flops_consumed = 0.0;
  double avg_relative_consumed = 0.0;
  double avg_relative_charged = 0.0;
  double cost_reduction = 0.0;  // 1 - avg_relative_consumed
  std::vector<std::size_t> exit_histogram;  // one bin per branch, then the main exit
};

// Batched evaluation applying exactly the decision rule of infer_one.
EvalReport evaluate(AssembledModel& model, const Dataset& data, const ExitPolicy& policy);

}  // namespace ptee
