#include "ptee/sweep.hpp"

#include <algorithm>
#include <fstream>

#include "ptee/errors.hpp"

namespace ptee {

namespace {

std::string csv_safe(std::string text) {
  std::replace(text.begin(), text.end(), ',', ';');
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

}  // namespace

std::vector<LambdaRow> sweep_lambda(const AssembledModel& base, const Dataset& train_data,
                                    const Dataset& eval_data, const TrainConfig& base_config,
                                    std::span<const double> lambdas, float threshold) {
  if (lambdas.empty()) throw Error("sweep", "lambda sweep needs at least one value");
  std::vector<double> sorted(lambdas.begin(), lambdas.end());
  std::sort(sorted.begin(), sorted.end());

  std::vector<LambdaRow> rows;
  for (double lambda : sorted) {
    LambdaRow row;
    row.lambda = lambda;
    try {
      AssembledModel model = clone_model(base);
      TrainConfig config = base_config;
      config.lambda = static_cast<float>(lambda);
      train_branches(model, train_data, config);
      row.report = evaluate(model, eval_data, ExitPolicy::uniform(model.num_branches(), threshold));
    } catch (const Error& e) {
      row.failed = true;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ThresholdRow> sweep_threshold(AssembledModel& model, const Dataset& eval_data,
                                          std::span<const double> thresholds) {
  if (thresholds.empty()) throw Error("sweep", "threshold sweep needs at least one value");
  std::vector<double> sorted(thresholds.begin(), thresholds.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> unique;
  for (double t : sorted) {
    if (!unique.empty() && unique.back() == t) {
      warn("threshold sweep: dropping duplicate value " + std::to_string(t));
      continue;
    }
    unique.push_back(t);
  }

  std::vector<ThresholdRow> rows;
  for (double t : unique) {
    ThresholdRow row;
    row.threshold = t;
    row.report = evaluate(model, eval_data,
                          ExitPolicy::uniform(model.num_branches(), static_cast<float>(t)));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_lambda_csv(const std::string& path, std::span<const LambdaRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("sweep", "cannot write '" + path + "'");
  out << "lambda,accuracy,avg_relative_cost,cost_reduction,accuracy_vs_true,avg_relative_charged,status\n";
  for (const auto& row : rows) {
    if (row.failed) {
      out << row.lambda << ",,,,,," << "failed: " << csv_safe(row.error) << "\n";
      continue;
    }
    out << row.lambda << ',' << row.report.accuracy_vs_pseudo << ','
        << row.report.avg_relative_consumed << ',' << row.report.cost_reduction << ','
        << row.report.accuracy_vs_true << ',' << row.report.avg_relative_charged << ",ok\n";
  }
  if (!out) throw Error("sweep", "failed writing '" + path + "'");
}

void write_threshold_csv(const std::string& path, std::span<const ThresholdRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("sweep", "cannot write '" + path + "'");
  const std::size_t exits = rows.empty() ? 0 : rows.front().report.exit_histogram.size();
  out << "threshold,accuracy_vs_pseudo,accuracy_vs_true,avg_relative_cost,cost_reduction";
  for (std::size_t e = 0; e + 1 < exits; ++e) out << ",exit_" << e << "_count";
  if (exits > 0) out << ",exit_main_count";
  out << ",avg_relative_charged\n";
  for (const auto& row : rows) {
    out << row.threshold << ',' << row.report.accuracy_vs_pseudo << ','
        << row.report.accuracy_vs_true << ',' << row.report.avg_relative_consumed << ','
        << row.report.cost_reduction;
    for (std::size_t count : row.report.exit_histogram) out << ',' << count;
    out << ',' << row.report.avg_relative_charged << "\n";
  }
  if (!out) throw Error("sweep", "failed writing '" + path + "'");
}

void write_run_info(const std::string& path, const nlohmann::ordered_json& info) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("sweep", "cannot write '" + path + "'");
  out << info.dump(2) << "\n";
  if (!out) throw Error("sweep", "failed writing '" + path + "'");
}

}  // namespace ptee
