#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ptee/assembled.hpp"
#include "ptee/errors.hpp"
#include "ptee/exp_config.hpp"
#include "ptee/flops.hpp"
#include "ptee/infer.hpp"
#include "ptee/sweep.hpp"
#include "ptee/train.hpp"
#include "ptee/zoo.hpp"

namespace {

using ptee::ExperimentConfig;

struct CommonArgs {
  std::string config_path;
  std::string out;
  std::optional<double> lambda;
  std::optional<double> threshold;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load_with_overrides(const CommonArgs& args) {
  ExperimentConfig config = ptee::load_config(args.config_path);
  if (args.lambda) config.train.lambda = static_cast<float>(*args.lambda);
  if (args.threshold) config.thresholds.assign(1, static_cast<float>(*args.threshold));
  if (args.seed) {
    config.train.seed = *args.seed;
    config.pretrain.seed = *args.seed;
  }
  return config;
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw ptee::Error("io", "cannot create directory '" + path + "': " + ec.message());
}

// One attach pass from config: placement targets -> boundaries -> branches.
ptee::AssembledModel attach_from_config(const ExperimentConfig& config, const ptee::NetworkGraph& graph,
                                        const ptee::ParameterStore& params) {
  const auto targets = ptee::distribution_targets(config.placement, config.branch_count);
  const auto boundaries = ptee::place_branches(graph, targets);
  const auto channels = config.resolved_channels();
  std::vector<ptee::BranchSpec> specs;
  for (int i = 0; i < config.branch_count; ++i) {
    ptee::BranchSpec s;
    s.num_blocks = config.branch_blocks;
    s.out_channels = channels[static_cast<std::size_t>(i)];
    s.num_classes = graph.num_classes;
    specs.push_back(s);
  }
  return ptee::attach_branches(graph, params, specs, boundaries, config.branch_seed);
}

nlohmann::ordered_json cost_table_json(const ptee::CostTable& costs) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : costs.rows) {
    rows.push_back({{"exit", r.exit_index},
                    {"attach", r.attach_boundary},
                    {"backbone_flops", r.backbone_flops},
                    {"branch_flops", r.branch_flops},
                    {"exit_flops", r.exit_flops},
                    {"relative", r.relative}});
  }
  return {{"backbone_total", costs.backbone_total}, {"rows", rows}};
}

nlohmann::ordered_json report_json(const ptee::EvalReport& report) {
  return {{"count", report.count},
          {"accuracy_vs_pseudo", report.accuracy_vs_pseudo},
          {"accuracy_vs_true", report.accuracy_vs_true},
          {"avg_flops_consumed", report.avg_flops_consumed},
          {"avg_relative_cost", report.avg_relative_consumed},
          {"avg_relative_charged", report.avg_relative_charged},
          {"cost_reduction", report.cost_reduction},
          {"exit_histogram", report.exit_histogram}};
}

int cmd_flops(const std::string& arch, std::int64_t classes, const std::vector<std::int64_t>& input) {
  if (input.size() != 3) throw ptee::Error("cli", "--input needs exactly three values: C H W");
  const auto graph = ptee::build_backbone(arch, classes, {input[0], input[1], input[2]});
  const auto total = ptee::graph_total_flops(graph);
  std::printf("arch %s  input %lldx%lldx%lld  classes %lld\n", graph.arch.c_str(),
              static_cast<long long>(input[0]), static_cast<long long>(input[1]),
              static_cast<long long>(input[2]), static_cast<long long>(classes));
  std::printf("total_flops %lld\n", static_cast<long long>(total));
  std::printf("boundary prefix_flops relative\n");
  for (int b : ptee::legal_boundaries(graph)) {
    const auto prefix = ptee::prefix_flops(graph, b);
    std::printf("%8d %12lld %8.4f\n", b, static_cast<long long>(prefix),
                static_cast<double>(prefix) / static_cast<double>(total));
  }
  return 0;
}

int cmd_pretrain(const CommonArgs& args) {
  const auto config = load_with_overrides(args);
  ensure_dir(args.out);
  const auto data = ptee::load_dataset(config.dataset);
  auto [train_data, val_data] = ptee::split_dataset(data, config.validation_fraction, config.split_seed);

  auto graph = ptee::build_backbone(config.arch, config.num_classes, config.input);
  ptee::ParameterStore params;
  ptee::Rng init_rng(config.pretrain.seed);
  ptee::init_backbone_params(graph, params, init_rng);

  const auto history = ptee::pretrain(graph, params, train_data, config.pretrain);
  for (const auto& e : history) {
    std::printf("epoch %d loss %.4f accuracy %.4f\n", e.epoch, e.loss, e.accuracy);
  }
  const double train_acc = ptee::backbone_accuracy(graph, params, train_data);
  const double val_acc =
      val_data.size() > 0 ? ptee::backbone_accuracy(graph, params, val_data) : -1.0;
  std::printf("train_accuracy %.4f val_accuracy %.4f\n", train_acc, val_acc);

  ptee::freeze_backbone(params);
  const std::string ckpt = args.out + "/backbone.ptee";
  ptee::save_backbone(ckpt, graph, params);

  nlohmann::ordered_json info;
  info["config"] = ptee::config_to_json(config);
  info["samples"] = {{"train", train_data.size()}, {"validation", val_data.size()}};
  info["split_seed"] = config.split_seed;
  info["train_accuracy"] = train_acc;
  info["val_accuracy"] = val_acc;
  nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
  for (const auto& e : history)
    epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
  info["epochs"] = std::move(epochs);
  ptee::write_run_info(args.out + "/run_info.json", info);
  std::printf("saved %s\n", ckpt.c_str());
  return 0;
}

int cmd_attach(const CommonArgs& args, const std::string& backbone_path) {
  const auto config = load_with_overrides(args);
  auto [graph, params] = ptee::load_backbone(backbone_path);
  ptee::freeze_backbone(params);
  auto model = attach_from_config(config, graph, params);

  const auto dir = std::filesystem::path(args.out).parent_path();
  if (!dir.empty()) ensure_dir(dir.string());
  ptee::save_model(args.out, model);
  std::printf("attached %d branches at boundaries", model.num_branches());
  for (int b : model.attach_points) std::printf(" %d", b);
  std::printf("\n");
  for (const auto& r : model.costs.rows) {
    std::printf("exit %d attach %d relative_cost %.4f\n", r.exit_index, r.attach_boundary, r.relative);
  }
  std::printf("saved %s\n", args.out.c_str());
  return 0;
}

int cmd_train_branches(const CommonArgs& args, const std::string& model_path) {
  const auto config = load_with_overrides(args);
  ensure_dir(args.out);
  auto model = ptee::load_model(model_path);
  const auto data = ptee::load_dataset(config.dataset);
  auto [train_data, val_data] = ptee::split_dataset(data, config.validation_fraction, config.split_seed);

  const auto history = ptee::train_branches(model, train_data, config.train);
  for (const auto& e : history) {
    std::printf("epoch %d total %.4f ce %.4f cost %.4f\n", e.epoch, e.total_loss, e.ce_sum, e.cost_sum);
  }
  ptee::write_training_csv(args.out + "/training.csv", history);
  const std::string out_model = args.out + "/model.ptee";
  ptee::save_model(out_model, model);

  nlohmann::ordered_json info;
  info["config"] = ptee::config_to_json(config);
  info["samples"] = {{"train", train_data.size()}, {"validation", val_data.size()}};
  info["split_seed"] = config.split_seed;
  info["cost_table"] = cost_table_json(model.costs);
  ptee::write_run_info(args.out + "/run_info.json", info);
  std::printf("saved %s\n", out_model.c_str());
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& model_path) {
  const auto config = load_with_overrides(args);
  ensure_dir(args.out);
  auto model = ptee::load_model(model_path);
  const auto data = ptee::load_dataset(config.dataset);
  auto [train_data, val_data] = ptee::split_dataset(data, config.validation_fraction, config.split_seed);
  const auto& eval_data = val_data.size() > 0 ? val_data : train_data;

  auto thresholds = config.resolved_thresholds();
  if (static_cast<int>(thresholds.size()) != model.num_branches())
    thresholds.assign(static_cast<std::size_t>(model.num_branches()), thresholds.front());
  const auto report = ptee::evaluate(model, eval_data, ptee::ExitPolicy{thresholds});

  std::printf("samples %zu accuracy_vs_pseudo %.4f accuracy_vs_true %.4f\n", report.count,
              report.accuracy_vs_pseudo, report.accuracy_vs_true);
  std::printf("avg_relative_cost %.4f cost_reduction %.4f avg_relative_charged %.4f\n",
              report.avg_relative_consumed, report.cost_reduction, report.avg_relative_charged);
  for (std::size_t e = 0; e < report.exit_histogram.size(); ++e) {
    const bool main_exit = e + 1 == report.exit_histogram.size();
    std::printf("exit_%s_count %zu\n", main_exit ? "main" : std::to_string(e).c_str(),
                report.exit_histogram[e]);
  }

  nlohmann::ordered_json out;
  out["config"] = ptee::config_to_json(config);
  out["thresholds"] = thresholds;
  out["report"] = report_json(report);
  ptee::write_run_info(args.out + "/eval.json", out);
  std::printf("saved %s/eval.json\n", args.out.c_str());
  return 0;
}

int cmd_sweep_lambda(const CommonArgs& args, const std::string& backbone_path,
                     std::vector<double> lambdas, double threshold) {
  const auto config = load_with_overrides(args);
  ensure_dir(args.out);
  auto [graph, params] = ptee::load_backbone(backbone_path);
  ptee::freeze_backbone(params);
  auto base = attach_from_config(config, graph, params);

  const auto data = ptee::load_dataset(config.dataset);
  auto [train_data, val_data] = ptee::split_dataset(data, config.validation_fraction, config.split_seed);
  const auto& eval_data = val_data.size() > 0 ? val_data : train_data;

  if (lambdas.empty()) lambdas = {0.2, 0.9, 2.3};
  const auto rows = ptee::sweep_lambda(base, train_data, eval_data, config.train, lambdas,
                                       static_cast<float>(threshold));
  for (const auto& row : rows) {
    if (row.failed) {
      std::printf("lambda %.3f failed: %s\n", row.lambda, row.error.c_str());
    } else {
      std::printf("lambda %.3f accuracy %.4f avg_relative_cost %.4f\n", row.lambda,
                  row.report.accuracy_vs_pseudo, row.report.avg_relative_consumed);
    }
  }
  ptee::write_lambda_csv(args.out + "/lambda_sweep.csv", rows);

  nlohmann::ordered_json info;
  info["config"] = ptee::config_to_json(config);
  info["split_seed"] = config.split_seed;
  info["threshold"] = threshold;
  info["lambdas"] = lambdas;
  info["cost_table"] = cost_table_json(base.costs);
  ptee::write_run_info(args.out + "/run_info.json", info);
  std::printf("saved %s/lambda_sweep.csv\n", args.out.c_str());
  return 0;
}

int cmd_sweep_threshold(const CommonArgs& args, const std::string& model_path,
                        std::vector<double> thresholds) {
  const auto config = load_with_overrides(args);
  ensure_dir(args.out);
  auto model = ptee::load_model(model_path);
  const auto data = ptee::load_dataset(config.dataset);
  auto [train_data, val_data] = ptee::split_dataset(data, config.validation_fraction, config.split_seed);
  const auto& eval_data = val_data.size() > 0 ? val_data : train_data;

  if (thresholds.empty()) {
    for (int i = 2; i <= 19; ++i) thresholds.push_back(0.05 * i);
    thresholds.push_back(1.0);
  }
  const auto rows = ptee::sweep_threshold(model, eval_data, thresholds);
  for (const auto& row : rows) {
    std::printf("threshold %.2f accuracy %.4f avg_relative_cost %.4f\n", row.threshold,
                row.report.accuracy_vs_pseudo, row.report.avg_relative_consumed);
  }
  ptee::write_threshold_csv(args.out + "/threshold_sweep.csv", rows);

  nlohmann::ordered_json info;
  info["config"] = ptee::config_to_json(config);
  info["split_seed"] = config.split_seed;
  info["thresholds"] = thresholds;
  info["cost_table"] = cost_table_json(model.costs);
  ptee::write_run_info(args.out + "/run_info.json", info);
  std::printf("saved %s/threshold_sweep.csv\n", args.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Early-exit branch toolkit for frozen convolutional backbones"};
  app.require_subcommand(1);

  // flops
  std::string flops_arch = "resnet-style-110";
  std::int64_t flops_classes = 10;
  std::vector<std::int64_t> flops_input = {3, 32, 32};
  auto* flops = app.add_subcommand("flops", "Analyze backbone cost and attach boundaries");
  flops->add_option("--arch", flops_arch, "Architecture name");
  flops->add_option("--classes", flops_classes, "Number of classes");
  flops->add_option("--input", flops_input, "Input shape: C H W")->expected(3);

  CommonArgs pre_args;
  auto* pre = app.add_subcommand("pretrain", "Train a backbone on true labels, then freeze it");
  pre->add_option("--config", pre_args.config_path, "Experiment config JSON")->required();
  pre->add_option("--out", pre_args.out, "Output directory")->required();
  std::uint64_t pre_seed = 0;
  auto* pre_seed_opt = pre->add_option("--seed", pre_seed, "Override the pretraining seed");

  CommonArgs attach_args;
  std::string attach_backbone;
  auto* attach = app.add_subcommand("attach", "Attach branches to a frozen backbone");
  attach->add_option("--config", attach_args.config_path, "Experiment config JSON")->required();
  attach->add_option("--backbone", attach_backbone, "Backbone checkpoint")->required();
  attach->add_option("--out", attach_args.out, "Output model path")->required();

  CommonArgs train_args;
  std::string train_model;
  auto* train = app.add_subcommand("train-branches", "Train branches against backbone outputs");
  train->add_option("--config", train_args.config_path, "Experiment config JSON")->required();
  train->add_option("--model", train_model, "Assembled model checkpoint")->required();
  train->add_option("--out", train_args.out, "Output directory")->required();
  double train_lambda = -1.0;
  train->add_option("--lambda", train_lambda, "Override the cost weight");
  std::uint64_t train_seed = 0;
  auto* train_seed_opt = train->add_option("--seed", train_seed, "Override the training seed");

  CommonArgs eval_args;
  std::string eval_model;
  double eval_threshold = -1.0;
  auto* eval = app.add_subcommand("eval", "Evaluate a trained model with exit thresholds");
  eval->add_option("--config", eval_args.config_path, "Experiment config JSON")->required();
  eval->add_option("--model", eval_model, "Assembled model checkpoint")->required();
  eval->add_option("--out", eval_args.out, "Output directory")->required();
  eval->add_option("--threshold", eval_threshold, "Uniform threshold override");

  CommonArgs sl_args;
  std::string sl_backbone;
  std::vector<double> sl_lambdas;
  double sl_threshold = 0.5;
  auto* sl = app.add_subcommand("sweep-lambda", "Train one model per cost weight and compare");
  sl->add_option("--config", sl_args.config_path, "Experiment config JSON")->required();
  sl->add_option("--backbone", sl_backbone, "Backbone checkpoint")->required();
  sl->add_option("--out", sl_args.out, "Output directory")->required();
  sl->add_option("--lambda", sl_lambdas, "Cost weights (default 0.2 0.9 2.3)");
  sl->add_option("--threshold", sl_threshold, "Evaluation threshold");

  CommonArgs st_args;
  std::string st_model;
  std::vector<double> st_thresholds;
  auto* st = app.add_subcommand("sweep-threshold", "Sweep exit thresholds on a trained model");
  st->add_option("--config", st_args.config_path, "Experiment config JSON")->required();
  st->add_option("--model", st_model, "Assembled model checkpoint")->required();
  st->add_option("--out", st_args.out, "Output directory")->required();
  st->add_option("--threshold", st_thresholds, "Threshold grid (default 0.10..0.95 step 0.05, plus 1.0)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (flops->parsed()) return cmd_flops(flops_arch, flops_classes, flops_input);
    if (pre->parsed()) {
      if (pre_seed_opt->count() > 0) pre_args.seed = pre_seed;
      return cmd_pretrain(pre_args);
    }
    if (attach->parsed()) return cmd_attach(attach_args, attach_backbone);
    if (train->parsed()) {
      if (train_lambda >= 0.0) train_args.lambda = train_lambda;
      if (train_seed_opt->count() > 0) train_args.seed = train_seed;
      return cmd_train_branches(train_args, train_model);
    }
    if (eval->parsed()) {
      if (eval_threshold >= 0.0) eval_args.threshold = eval_threshold;
      return cmd_eval(eval_args, eval_model);
    }
    if (sl->parsed()) return cmd_sweep_lambda(sl_args, sl_backbone, sl_lambdas, sl_threshold);
    if (st->parsed()) return cmd_sweep_threshold(st_args, st_model, st_thresholds);
  } catch (const ptee::Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
