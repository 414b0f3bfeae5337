#include "ptee/infer.hpp"

#include <algorithm>
#include <numeric>

#include "ptee/errors.hpp"
#include "ptee/ops.hpp"

namespace ptee {

namespace {

void check_policy(const AssembledModel& model, const ExitPolicy& policy) {
  if (static_cast<int>(policy.thresholds.size()) != model.num_branches())
    throw Error("infer", "need one threshold per branch, got " +
                             std::to_string(policy.thresholds.size()) + " for " +
                             std::to_string(model.num_branches()));
}

}  // namespace

InferenceTrace infer_one(AssembledModel& model, const nn::Tensor& x, const ExitPolicy& policy) {
  check_policy(model, policy);
  if (x.shape().size() != 4 || x.shape()[0] != 1)
    throw Error("infer", "infer_one expects a single [1,C,H,W] sample, got " + nn::shape_str(x.shape()));

  nn::NoGradGuard guard;
  const auto total = static_cast<double>(model.costs.backbone_total);

  nn::Tensor cur = run_stem(model.graph, model.params, x, /*training=*/false);
  int done = 0;
  std::int64_t overhead = 0;
  for (int b = 0; b < model.num_branches(); ++b) {
    const int boundary = model.attach_points[static_cast<std::size_t>(b)];
    cur = run_blocks(model.graph, model.params, cur, done, boundary, /*training=*/false);
    done = boundary;
    auto out = branch_forward(model.branches[static_cast<std::size_t>(b)], cur, model.params,
                              /*training=*/false);
    const float h = out.confidence.values()[0];
    if (h >= policy.thresholds[static_cast<std::size_t>(b)]) {
      const auto& row = model.costs.row(b);
      InferenceTrace trace;
      trace.exit_index = b;
      trace.predicted_class = nn::argmax_rows(out.probs)[0];
      trace.confidence_at_exit = h;
      trace.flops_consumed = row.exit_flops;
      trace.flops_charged = row.exit_flops + overhead;
      trace.relative_consumed = row.relative;
      trace.relative_charged = static_cast<double>(trace.flops_charged) / total;
      return trace;
    }
    overhead += model.costs.row(b).branch_flops;
  }

  cur = run_blocks(model.graph, model.params, cur, done, static_cast<int>(model.graph.blocks.size()),
                   /*training=*/false);
  auto probs = run_classifier(model.graph, model.params, cur, /*training=*/false);
  InferenceTrace trace;
  trace.exit_index = model.num_branches();
  trace.predicted_class = nn::argmax_rows(probs)[0];
  trace.confidence_at_exit = 1.0f;
  trace.flops_consumed = model.costs.backbone_total;
  trace.flops_charged = model.costs.backbone_total + overhead;
  trace.relative_consumed = 1.0;
  trace.relative_charged = static_cast<double>(trace.flops_charged) / total;
  return trace;
}

EvalReport evaluate(AssembledModel& model, const Dataset& data, const ExitPolicy& policy) {
  check_policy(model, policy);
  if (data.size() == 0) throw Error("infer", "evaluation needs a non-empty dataset");

  nn::NoGradGuard guard;
  const int branches = model.num_branches();
  EvalReport report;
  report.count = data.size();
  report.exit_histogram.assign(static_cast<std::size_t>(branches) + 1, 0);

  std::size_t correct_pseudo = 0;
  std::size_t correct_true = 0;
  double consumed_sum = 0.0;
  double charged_sum = 0.0;

  std::int64_t main_charged = model.costs.backbone_total;
  for (int b = 0; b < branches; ++b) main_charged += model.costs.row(b).branch_flops;

  constexpr std::size_t kChunk = 64;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, data.size() - start);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), start);
    auto backbone = backbone_forward(model.graph, model.params, data.batch(idx), model.attach_points,
                                     /*training=*/false);
    std::vector<std::vector<std::int64_t>> branch_class(static_cast<std::size_t>(branches));
    std::vector<std::span<const float>> branch_conf(static_cast<std::size_t>(branches));
    std::vector<BranchOutput> outputs;
    outputs.reserve(static_cast<std::size_t>(branches));
    for (int b = 0; b < branches; ++b) {
      outputs.push_back(branch_forward(model.branches[static_cast<std::size_t>(b)],
                                       backbone.taps[static_cast<std::size_t>(b)], model.params,
                                       /*training=*/false));
      branch_class[static_cast<std::size_t>(b)] = nn::argmax_rows(outputs.back().probs);
      branch_conf[static_cast<std::size_t>(b)] = outputs.back().confidence.values();
    }
    const auto main_class = nn::argmax_rows(backbone.probs);

    for (std::size_t i = 0; i < count; ++i) {
      int exit_index = branches;
      std::int64_t predicted = main_class[i];
      std::int64_t consumed = model.costs.backbone_total;
      std::int64_t charged = main_charged;
      std::int64_t overhead = 0;
      for (int b = 0; b < branches; ++b) {
        const float h = branch_conf[static_cast<std::size_t>(b)][i];
        if (h >= policy.thresholds[static_cast<std::size_t>(b)]) {
          exit_index = b;
          predicted = branch_class[static_cast<std::size_t>(b)][i];
          consumed = model.costs.row(b).exit_flops;
          charged = consumed + overhead;
          break;
        }
        overhead += model.costs.row(b).branch_flops;
      }
      ++report.exit_histogram[static_cast<std::size_t>(exit_index)];
      consumed_sum += static_cast<double>(consumed);
      charged_sum += static_cast<double>(charged);
      if (predicted == main_class[i]) ++correct_pseudo;
      if (data.has_labels() && predicted == data.labels[start + i]) ++correct_true;
    }
  }

  const auto n = static_cast<double>(report.count);
  const auto total = static_cast<double>(model.costs.backbone_total);
  report.accuracy_vs_pseudo = static_cast<double>(correct_pseudo) / n;
  report.accuracy_vs_true = data.has_labels() ? static_cast<double>(correct_true) / n : -1.0;
  report.avg_flops_consumed = consumed_sum / n;
  report.avg_relative_consumed = consumed_sum / n / total;
  report.avg_relative_charged = charged_sum / n / total;
  report.cost_reduction = 1.0 - report.avg_relative_consumed;
  return report;
}

}  // namespace ptee
