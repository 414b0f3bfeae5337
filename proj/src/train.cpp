#include "ptee/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "ptee/errors.hpp"
#include "ptee/ops.hpp"
#include "ptee/rng.hpp"
#include "ptee/sgd.hpp"

namespace ptee {

std::vector<std::int64_t> pseudo_labels(const nn::Tensor& backbone_probs) {
  return nn::argmax_rows(backbone_probs);
}

std::vector<nn::Tensor> cumulative_predictions(std::span<const nn::Tensor> confidence,
                                               std::span<const nn::Tensor> probs,
                                               const nn::Tensor& main_probs) {
  if (confidence.size() != probs.size())
    throw Error("train", "need one confidence tensor per branch output");
  const std::size_t n = confidence.size();
  std::vector<nn::Tensor> composite(n);
  nn::Tensor deeper = main_probs;
  for (std::size_t i = n; i-- > 0;) {
    auto keep = nn::affine(confidence[i], -1.0f, 1.0f);  // 1 - h
    composite[i] = nn::add(nn::mul_rowvec(confidence[i], probs[i]), nn::mul_rowvec(keep, deeper));
    deeper = composite[i];
  }
  return composite;
}

std::vector<nn::Tensor> cumulative_costs(std::span<const nn::Tensor> confidence,
                                         std::span<const double> exit_costs,
                                         const std::string& recursion) {
  if (exit_costs.size() != confidence.size() + 1)
    throw Error("train", "exit cost list must cover every branch plus the main exit");
  if (recursion != "recursive" && recursion != "literal")
    throw Error("train", "unknown cost recursion '" + recursion + "'");
  const std::size_t n = confidence.size();
  std::vector<nn::Tensor> cost(n);
  if (recursion == "recursive") {
    const auto batch = confidence.empty() ? 1 : confidence[0].shape()[0];
    nn::Tensor deeper = nn::Tensor::full({batch, 1}, static_cast<float>(exit_costs[n]));
    for (std::size_t i = n; i-- > 0;) {
      auto keep = nn::affine(confidence[i], -1.0f, 1.0f);
      auto own = nn::affine(confidence[i], static_cast<float>(exit_costs[i]), 0.0f);
      cost[i] = nn::add(own, nn::mul_rowvec(keep, deeper));
      deeper = cost[i];
    }
  } else {
    // h*c_i + (1-h)*c_{i+1} folds into one affine map of h.
    for (std::size_t i = 0; i < n; ++i) {
      const auto own = static_cast<float>(exit_costs[i]);
      const auto next = static_cast<float>(exit_costs[i + 1]);
      cost[i] = nn::affine(confidence[i], own - next, next);
    }
  }
  return cost;
}

LossBreakdown total_loss(std::span<const nn::Tensor> confidence, std::span<const nn::Tensor> probs,
                         const nn::Tensor& main_probs, const std::vector<std::int64_t>& pseudo,
                         std::span<const double> exit_costs, float lambda,
                         const std::string& recursion) {
  if (confidence.empty()) throw Error("train", "loss needs at least one branch");
  if (lambda < 0.0f) throw Error("train", "lambda must be non-negative");

  const auto composite = cumulative_predictions(confidence, probs, main_probs);
  const auto cost = cumulative_costs(confidence, exit_costs, recursion);

  LossBreakdown out;
  nn::Tensor total;
  for (std::size_t i = 0; i < composite.size(); ++i) {
    auto ce = nn::cross_entropy(composite[i], pseudo);
    auto mean_cost = nn::mean_all(cost[i]);
    out.ce_per_branch.push_back(ce.item());
    out.cost_per_branch.push_back(mean_cost.item());
    double h_sum = 0.0;
    for (float v : confidence[i].values()) h_sum += v;
    out.mean_confidence.push_back(h_sum / static_cast<double>(confidence[i].numel()));

    auto term = nn::add(ce, nn::affine(mean_cost, lambda, 0.0f));
    total = i == 0 ? term : nn::add(total, term);
  }
  out.ce_sum = std::accumulate(out.ce_per_branch.begin(), out.ce_per_branch.end(), 0.0);
  out.cost_sum = std::accumulate(out.cost_per_branch.begin(), out.cost_per_branch.end(), 0.0);
  out.total = total;
  return out;
}

namespace {

// Backbone outputs for the whole dataset, captured once. The backbone is
// frozen, so these never change during branch training.
struct CachedTargets {
  std::vector<std::vector<std::vector<float>>> taps;  // [branch][sample] flat activation
  std::vector<nn::Shape> tap_shapes;                  // [branch] single-sample [C,H,W]
  std::vector<std::vector<float>> main_probs;         // [sample] K floats
  std::vector<std::int64_t> pseudo;
};

CachedTargets cache_backbone_outputs(AssembledModel& model, const Dataset& data) {
  nn::NoGradGuard guard;
  CachedTargets cache;
  cache.taps.resize(model.branches.size());
  for (int boundary : model.attach_points) {
    auto s = boundary_shape(model.graph, boundary);
    cache.tap_shapes.push_back({s[1], s[2], s[3]});
  }

  ParameterStore& params = model.params;
  constexpr std::size_t kChunk = 64;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, data.size() - start);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), start);
    auto result = backbone_forward(model.graph, params, data.batch(idx), model.attach_points,
                                   /*training=*/false);
    for (std::size_t b = 0; b < model.branches.size(); ++b) {
      const auto& tap = result.taps[b];
      const auto per = static_cast<std::size_t>(tap.numel()) / count;
      for (std::size_t i = 0; i < count; ++i) {
        cache.taps[b].emplace_back(tap.values().begin() + i * per,
                                   tap.values().begin() + (i + 1) * per);
      }
    }
    const auto k = static_cast<std::size_t>(result.probs.shape()[1]);
    for (std::size_t i = 0; i < count; ++i) {
      cache.main_probs.emplace_back(result.probs.values().begin() + i * k,
                                    result.probs.values().begin() + (i + 1) * k);
    }
    const auto labels = pseudo_labels(result.probs);
    cache.pseudo.insert(cache.pseudo.end(), labels.begin(), labels.end());
  }
  return cache;
}

nn::Tensor stack_cached(const std::vector<std::vector<float>>& rows, const nn::Shape& per_shape,
                        std::span<const std::size_t> order) {
  nn::Shape shape{static_cast<std::int64_t>(order.size())};
  shape.insert(shape.end(), per_shape.begin(), per_shape.end());
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(nn::shape_numel(shape)));
  for (std::size_t i : order) values.insert(values.end(), rows[i].begin(), rows[i].end());
  return nn::Tensor::from_values(std::move(shape), std::move(values));
}

}  // namespace

std::vector<TrainEpochStats> train_branches(AssembledModel& model, const Dataset& data,
                                            const TrainConfig& config) {
  if (!model.params.all_frozen("backbone."))
    throw Error("train", "backbone must be frozen before branch training");
  if (data.size() == 0) throw Error("train", "training needs a non-empty dataset");
  if (config.batch_size < 1) throw Error("train", "batch size must be positive");
  if (config.epochs < 0) throw Error("train", "epoch count must be non-negative");
  if (config.lambda < 0.0f) throw Error("train", "lambda must be non-negative");
  if (config.cost_recursion != "recursive" && config.cost_recursion != "literal")
    throw Error("train", "unknown cost recursion '" + config.cost_recursion + "'");

  const std::uint64_t backbone_before = model.params.content_hash("backbone.");
  const auto cache = cache_backbone_outputs(model, data);

  std::vector<double> exit_costs;
  for (const auto& row : model.costs.rows) exit_costs.push_back(row.relative);

  const auto num_classes = model.graph.num_classes;
  SgdOptimizer opt(config.learning_rate, config.momentum);
  Rng rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<TrainEpochStats> history;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const ParameterStore snapshot = model.params.clone();
    rng.shuffle(order);

    TrainEpochStats stats;
    stats.epoch = epoch;
    stats.mean_confidence.assign(model.branches.size(), 0.0);
    stats.ce_per_branch.assign(model.branches.size(), 0.0);
    stats.cost_per_branch.assign(model.branches.size(), 0.0);

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min<std::size_t>(config.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, count);

      std::vector<nn::Tensor> confidence, probs;
      model.params.zero_grads();
      for (std::size_t b = 0; b < model.branches.size(); ++b) {
        auto tap = stack_cached(cache.taps[b], cache.tap_shapes[b], batch);
        auto outputs = branch_forward(model.branches[b], tap, model.params, /*training=*/true);
        confidence.push_back(std::move(outputs.confidence));
        probs.push_back(std::move(outputs.probs));
      }
      auto main_probs = stack_cached(cache.main_probs, {num_classes}, batch);
      std::vector<std::int64_t> labels(count);
      for (std::size_t i = 0; i < count; ++i) labels[i] = cache.pseudo[batch[i]];

      auto loss = total_loss(confidence, probs, main_probs, labels, exit_costs, config.lambda,
                             config.cost_recursion);
      const double value = loss.total.item();
      if (!std::isfinite(value)) {
        model.params = snapshot.clone();
        throw Error("train", "non-finite loss in epoch " + std::to_string(epoch) +
                                 "; parameters restored to the epoch start");
      }
      nn::backward(loss.total);
      try {
        opt.step(model.params);
      } catch (const Error&) {
        model.params = snapshot.clone();
        throw;
      }

      const auto w = static_cast<double>(count);
      stats.total_loss += value * w;
      stats.ce_sum += loss.ce_sum * w;
      stats.cost_sum += loss.cost_sum * w;
      for (std::size_t b = 0; b < model.branches.size(); ++b) {
        stats.mean_confidence[b] += loss.mean_confidence[b] * w;
        stats.ce_per_branch[b] += loss.ce_per_branch[b] * w;
        stats.cost_per_branch[b] += loss.cost_per_branch[b] * w;
      }
    }

    const auto total = static_cast<double>(data.size());
    stats.total_loss /= total;
    stats.ce_sum /= total;
    stats.cost_sum /= total;
    for (std::size_t b = 0; b < model.branches.size(); ++b) {
      stats.mean_confidence[b] /= total;
      stats.ce_per_branch[b] /= total;
      stats.cost_per_branch[b] /= total;
    }
    history.push_back(std::move(stats));
  }

  // Running batchnorm statistics lag the weights they were averaged under.
  // One fixed-order pass with momentum 1/i replaces them with the exact mean
  // of batch statistics under the final weights.
  if (config.epochs > 0) {
    nn::NoGradGuard guard;
    std::vector<std::size_t> fixed(data.size());
    std::iota(fixed.begin(), fixed.end(), std::size_t{0});
    for (std::size_t b = 0; b < model.branches.size(); ++b) {
      std::size_t batch_index = 0;
      for (std::size_t start = 0; start < fixed.size(); start += config.batch_size) {
        const std::size_t count = std::min<std::size_t>(config.batch_size, fixed.size() - start);
        const std::span<const std::size_t> batch(fixed.data() + start, count);
        ForwardCtx ctx;
        ctx.training = true;
        ctx.bn_momentum = 1.0f / static_cast<float>(batch_index + 1);
        auto tap = stack_cached(cache.taps[b], cache.tap_shapes[b], batch);
        (void)branch_forward(model.branches[b], tap, model.params, ctx);
        ++batch_index;
      }
    }
  }

  if (model.params.content_hash("backbone.") != backbone_before)
    throw Error("train", "backbone parameters changed during branch training");
  return history;
}

void write_training_csv(const std::string& path, std::span<const TrainEpochStats> stats) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("train", "cannot write '" + path + "'");
  const std::size_t branches = stats.empty() ? 0 : stats.front().mean_confidence.size();
  out << "epoch,total_loss,ce_sum,cost_sum";
  for (std::size_t b = 0; b < branches; ++b) out << ",mean_h_exit_" << b;
  for (std::size_t b = 0; b < branches; ++b) out << ",ce_exit_" << b;
  for (std::size_t b = 0; b < branches; ++b) out << ",cost_exit_" << b;
  out << "\n";
  for (const auto& row : stats) {
    out << row.epoch << ',' << row.total_loss << ',' << row.ce_sum << ',' << row.cost_sum;
    for (double v : row.mean_confidence) out << ',' << v;
    for (double v : row.ce_per_branch) out << ',' << v;
    for (double v : row.cost_per_branch) out << ',' << v;
    out << "\n";
  }
  if (!out) throw Error("train", "failed writing '" + path + "'");
}

}  // namespace ptee
