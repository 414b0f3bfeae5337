#include "ptee/zoo.hpp"

#include <cmath>
#include <numeric>

#include "ptee/errors.hpp"
#include "ptee/ops.hpp"
#include "ptee/rng.hpp"
#include "ptee/sgd.hpp"

namespace ptee {

namespace {

std::string block_prefix(int j) { return "backbone.b" + std::to_string(j); }

NetworkGraph build_plain_cnn_small(std::int64_t num_classes, const nn::Shape& in) {
  NetworkGraph g;
  g.arch = "plain-cnn-small";
  g.input_shape = in;
  g.num_classes = num_classes;

  const std::int64_t widths[4] = {8, 16, 32, 32};
  std::int64_t prev = in[0];
  for (int j = 0; j < 4; ++j) {
    BasicBlock b;
    b.kind = BlockKind::plain;
    const std::string p = block_prefix(j);
    b.layers.push_back(conv_spec(p + ".conv", prev, widths[j], 3, 1, 1));
    b.layers.push_back(bn_spec(p + ".bn", widths[j]));
    b.layers.push_back(relu_spec());
    if (j == 1 || j == 2) b.layers.push_back(maxpool_spec(2, 2));
    g.blocks.push_back(std::move(b));
    prev = widths[j];
  }
  g.classifier.push_back(avgpool_global_spec());
  g.classifier.push_back(linear_spec("backbone.fc", prev, num_classes));
  g.classifier.push_back(softmax_spec());
  return g;
}

NetworkGraph build_resnet(int depth, std::int64_t num_classes, const nn::Shape& in) {
  if (depth < 8 || (depth - 2) % 6 != 0) {
    throw Error("zoo", "resnet-style depth must satisfy (depth-2) % 6 == 0, got " +
                           std::to_string(depth));
  }
  NetworkGraph g;
  g.arch = "resnet-style-" + std::to_string(depth);
  g.input_shape = in;
  g.num_classes = num_classes;

  g.stem.push_back(conv_spec("backbone.stem.conv", in[0], 16, 3, 1, 1));
  g.stem.push_back(bn_spec("backbone.stem.bn", 16));
  g.stem.push_back(relu_spec());

  const int per_stage = (depth - 2) / 6;
  std::int64_t prev = 16;
  int j = 0;
  for (int stage = 0; stage < 3; ++stage) {
    const std::int64_t width = 16 << stage;
    for (int k = 0; k < per_stage; ++k, ++j) {
      const int stride = (stage > 0 && k == 0) ? 2 : 1;
      const std::string p = block_prefix(j);
      BasicBlock b;
      b.kind = BlockKind::residual;
      b.layers.push_back(conv_spec(p + ".conv1", prev, width, 3, stride, 1));
      b.layers.push_back(bn_spec(p + ".bn1", width));
      b.layers.push_back(relu_spec());
      b.layers.push_back(conv_spec(p + ".conv2", width, width, 3, 1, 1));
      b.layers.push_back(bn_spec(p + ".bn2", width));
      if (stride != 1 || prev != width) {
        b.shortcut.push_back(conv_spec(p + ".proj.conv", prev, width, 1, stride, 0));
        b.shortcut.push_back(bn_spec(p + ".proj.bn", width));
      }
      g.blocks.push_back(std::move(b));
      prev = width;
    }
  }
  g.classifier.push_back(avgpool_global_spec());
  g.classifier.push_back(linear_spec("backbone.fc", prev, num_classes));
  g.classifier.push_back(softmax_spec());
  return g;
}

NetworkGraph build_vgg19(std::int64_t num_classes, const nn::Shape& in) {
  NetworkGraph g;
  g.arch = "vgg-style-19";
  g.input_shape = in;
  g.num_classes = num_classes;

  // Eight conv-pair blocks; a trailing max pool closes each resolution stage.
  struct Pair {
    std::int64_t width;
    bool pool;
  };
  const Pair plan[8] = {{64, true},  {128, true}, {256, false}, {256, true},
                        {512, false}, {512, true}, {512, false}, {512, true}};
  std::int64_t prev = in[0];
  for (int j = 0; j < 8; ++j) {
    const std::string p = block_prefix(j);
    BasicBlock b;
    b.kind = BlockKind::plain;
    b.layers.push_back(conv_spec(p + ".conv1", prev, plan[j].width, 3, 1, 1, /*bias=*/true));
    b.layers.push_back(relu_spec());
    b.layers.push_back(conv_spec(p + ".conv2", plan[j].width, plan[j].width, 3, 1, 1, /*bias=*/true));
    b.layers.push_back(relu_spec());
    if (plan[j].pool) b.layers.push_back(maxpool_spec(2, 2));
    g.blocks.push_back(std::move(b));
    prev = plan[j].width;
  }
  g.classifier.push_back(avgpool_global_spec());
  g.classifier.push_back(linear_spec("backbone.fc", prev, num_classes));
  g.classifier.push_back(softmax_spec());
  return g;
}

NetworkGraph build_densenet121(std::int64_t num_classes, const nn::Shape& in) {
  NetworkGraph g;
  g.arch = "densenet-style-121";
  g.input_shape = in;
  g.num_classes = num_classes;

  constexpr std::int64_t growth = 32;
  constexpr std::int64_t bottleneck = 4 * growth;
  const int units[4] = {6, 12, 24, 16};

  g.stem.push_back(conv_spec("backbone.stem.conv", in[0], 2 * growth, 3, 1, 1));
  g.stem.push_back(bn_spec("backbone.stem.bn", 2 * growth));
  g.stem.push_back(relu_spec());

  std::int64_t channels = 2 * growth;
  for (int j = 0; j < 4; ++j) {
    const std::string p = block_prefix(j);
    BasicBlock b;
    b.kind = BlockKind::dense;
    for (int u = 0; u < units[j]; ++u) {
      const std::string up = p + ".u" + std::to_string(u);
      std::vector<LayerSpec> unit;
      unit.push_back(bn_spec(up + ".bn1", channels));
      unit.push_back(relu_spec());
      unit.push_back(conv_spec(up + ".conv1", channels, bottleneck, 1, 1, 0));
      unit.push_back(bn_spec(up + ".bn2", bottleneck));
      unit.push_back(relu_spec());
      unit.push_back(conv_spec(up + ".conv2", bottleneck, growth, 3, 1, 1));
      b.dense_units.push_back(std::move(unit));
      channels += growth;
    }
    if (j < 3) {
      const std::int64_t half = channels / 2;
      b.transition.push_back(bn_spec(p + ".t.bn", channels));
      b.transition.push_back(relu_spec());
      b.transition.push_back(conv_spec(p + ".t.conv", channels, half, 1, 1, 0));
      b.transition.push_back(maxpool_spec(2, 2));
      channels = half;
    }
    g.blocks.push_back(std::move(b));
  }
  g.classifier.push_back(bn_spec("backbone.head.bn", channels));
  g.classifier.push_back(relu_spec());
  g.classifier.push_back(avgpool_global_spec());
  g.classifier.push_back(linear_spec("backbone.fc", channels, num_classes));
  g.classifier.push_back(softmax_spec());
  return g;
}

}  // namespace

NetworkGraph build_backbone(const std::string& arch, std::int64_t num_classes, nn::Shape input_chw) {
  if (input_chw.size() != 3 || input_chw[0] < 1 || input_chw[1] < 1 || input_chw[2] < 1) {
    throw Error("zoo", "input shape must be [C,H,W] with positive extents");
  }
  if (num_classes < 2) throw Error("zoo", "need at least 2 classes");

  NetworkGraph g;
  const std::string resnet_prefix = "resnet-style-";
  if (arch == "plain-cnn-small") {
    g = build_plain_cnn_small(num_classes, input_chw);
  } else if (arch.rfind(resnet_prefix, 0) == 0) {
    int depth = 0;
    try {
      depth = std::stoi(arch.substr(resnet_prefix.size()));
    } catch (const std::exception&) {
      throw Error("zoo", "bad resnet-style depth in '" + arch + "'");
    }
    g = build_resnet(depth, num_classes, input_chw);
  } else if (arch == "vgg-style-19") {
    g = build_vgg19(num_classes, input_chw);
  } else if (arch == "densenet-style-121") {
    g = build_densenet121(num_classes, input_chw);
  } else {
    throw Error("zoo", "unknown architecture '" + arch + "'");
  }
  validate_graph(g);
  return g;
}

std::vector<PretrainEpoch> pretrain(const NetworkGraph& graph, ParameterStore& params,
                                    const Dataset& data, const PretrainConfig& config) {
  if (!data.has_labels()) throw Error("zoo", "pretraining needs labeled data");
  if (data.size() == 0) throw Error("zoo", "pretraining needs a non-empty dataset");
  if (config.batch_size < 1) throw Error("zoo", "batch size must be positive");
  if (config.epochs < 0) throw Error("zoo", "epoch count must be non-negative");

  SgdOptimizer opt(config.learning_rate, config.momentum);
  Rng rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<PretrainEpoch> history;
  history.reserve(static_cast<std::size_t>(config.epochs));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min<std::size_t>(config.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, count);
      auto x = data.batch(idx);
      std::vector<std::int64_t> labels(count);
      for (std::size_t i = 0; i < count; ++i) labels[i] = data.labels[idx[i]];

      params.zero_grads();
      auto result = backbone_forward(graph, params, x, {}, /*training=*/true);
      auto loss = nn::cross_entropy(result.probs, labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw Error("zoo", "pretraining diverged: non-finite loss in epoch " +
                               std::to_string(epoch));
      }
      nn::backward(loss);
      opt.step(params);

      loss_sum += value * static_cast<double>(count);
      const auto predicted = nn::argmax_rows(result.probs);
      for (std::size_t i = 0; i < count; ++i) {
        if (predicted[i] == labels[i]) ++correct;
      }
    }
    PretrainEpoch row;
    row.epoch = epoch;
    row.loss = loss_sum / static_cast<double>(data.size());
    row.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    history.push_back(row);
  }
  if (config.epochs > 0) recalibrate_batchnorm(graph, params, data, config.batch_size);
  return history;
}

void recalibrate_batchnorm(const NetworkGraph& graph, ParameterStore& params, const Dataset& data,
                           int batch_size) {
  if (data.size() == 0) throw Error("zoo", "recalibration needs a non-empty dataset");
  if (batch_size < 1) throw Error("zoo", "batch size must be positive");
  nn::NoGradGuard guard;
  std::vector<std::size_t> idx;
  std::size_t batch_index = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t count = std::min<std::size_t>(batch_size, data.size() - start);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), start);
    ForwardCtx ctx;
    ctx.training = true;
    // Momentum 1/i turns the exponential update into a running mean, so the
    // first batch overwrites the stale estimates and batch i contributes 1/i.
    ctx.bn_momentum = 1.0f / static_cast<float>(batch_index + 1);
    (void)backbone_forward(graph, params, data.batch(idx), {}, ctx);
    ++batch_index;
  }
}

void freeze_backbone(ParameterStore& params) { params.freeze_prefix("backbone."); }

double backbone_accuracy(const NetworkGraph& graph, ParameterStore& params, const Dataset& data) {
  if (!data.has_labels()) throw Error("zoo", "accuracy needs labeled data");
  if (data.size() == 0) throw Error("zoo", "accuracy needs a non-empty dataset");
  nn::NoGradGuard guard;
  constexpr std::size_t kChunk = 64;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, data.size() - start);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), start);
    auto result = backbone_forward(graph, params, data.batch(idx), {}, /*training=*/false);
    const auto predicted = nn::argmax_rows(result.probs);
    for (std::size_t i = 0; i < count; ++i) {
      if (predicted[i] == data.labels[start + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace ptee
