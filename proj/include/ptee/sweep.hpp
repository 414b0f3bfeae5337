#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptee/infer.hpp"
#include "ptee/train.hpp"

namespace ptee {

struct LambdaRow {
  double lambda = 0.0;
  bool failed = false;
  std::string error;  // set when failed
  EvalReport report;  // valid when not failed
};

// Trains an independent copy of `base` per lambda value (all copies start
// from the same initialization), then evaluates each at a uniform threshold.
// Rows come back sorted by lambda; a failed training run marks its row
// instead of aborting the sweep.
std::vector<LambdaRow> sweep_lambda(const AssembledModel& base, const Dataset& train_data,
                                    const Dataset& eval_data, const TrainConfig& base_config,
                                    std::span<const double> lambdas, float threshold);

struct ThresholdRow {
  double threshold = 0.0;
  EvalReport report;
};

// Inference-only sweep of a trained model over uniform thresholds. Duplicate
// values are dropped with a warning; rows come back sorted ascending.
std::vector<ThresholdRow> sweep_threshold(AssembledModel& model, const Dataset& eval_data,
                                          std::span<const double> thresholds);

void write_lambda_csv(const std::string& path, std::span<const LambdaRow> rows);
void write_threshold_csv(const std::string& path, std::span<const ThresholdRow> rows);
void write_run_info(const std::string& path, const nlohmann::ordered_json& info);

}  // namespace ptee
