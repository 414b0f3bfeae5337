#include "ptee/exp_config.hpp"

#include <fstream>
#include <initializer_list>

#include "ptee/errors.hpp"

namespace ptee {

namespace {

void check_keys(const nlohmann::ordered_json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw Error("config", "'" + where + "' must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) throw Error("config", "unknown key '" + where + "/" + key + "'");
  }
}

// Accepts a scalar (broadcast) or an array.
template <class T>
std::vector<T> scalar_or_array(const nlohmann::ordered_json& j, const std::string& where) {
  std::vector<T> out;
  if (j.is_array()) {
    for (const auto& v : j) out.push_back(v.get<T>());
  } else if (j.is_number()) {
    out.push_back(j.get<T>());
  } else {
    throw Error("config", "'" + where + "' must be a number or an array of numbers");
  }
  return out;
}

}  // namespace

std::vector<std::int64_t> ExperimentConfig::resolved_channels() const {
  if (branch_channels.empty()) return std::vector<std::int64_t>(static_cast<std::size_t>(branch_count), 0);
  if (branch_channels.size() == 1)
    return std::vector<std::int64_t>(static_cast<std::size_t>(branch_count), branch_channels[0]);
  if (static_cast<int>(branch_channels.size()) != branch_count)
    throw Error("config", "branches/out_channels lists " + std::to_string(branch_channels.size()) +
                              " widths for " + std::to_string(branch_count) + " branches");
  return branch_channels;
}

std::vector<float> ExperimentConfig::resolved_thresholds() const {
  if (thresholds.empty()) return std::vector<float>(static_cast<std::size_t>(branch_count), 0.5f);
  if (thresholds.size() == 1)
    return std::vector<float>(static_cast<std::size_t>(branch_count), thresholds[0]);
  if (static_cast<int>(thresholds.size()) != branch_count)
    throw Error("config", "thresholds lists " + std::to_string(thresholds.size()) + " values for " +
                              std::to_string(branch_count) + " branches");
  return thresholds;
}

ExperimentConfig config_from_json(const nlohmann::ordered_json& j) {
  check_keys(j, "", {"arch", "num_classes", "input", "dataset", "split", "pretrain", "branches",
                     "train", "thresholds"});
  ExperimentConfig c;
  if (j.contains("arch")) c.arch = j["arch"].get<std::string>();
  if (j.contains("num_classes")) c.num_classes = j["num_classes"].get<std::int64_t>();
  if (j.contains("input")) c.input = j["input"].get<nn::Shape>();

  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    check_keys(d, "dataset", {"kind", "seed", "classes", "count", "image_size", "channels", "noise",
                              "images_path", "labels_path", "path", "limit"});
    if (d.contains("kind")) c.dataset.kind = d["kind"].get<std::string>();
    if (d.contains("seed")) c.dataset.seed = d["seed"].get<std::uint64_t>();
    if (d.contains("classes")) c.dataset.classes = d["classes"].get<int>();
    if (d.contains("count")) c.dataset.count = d["count"].get<int>();
    if (d.contains("image_size")) c.dataset.image_size = d["image_size"].get<int>();
    if (d.contains("channels")) c.dataset.channels = d["channels"].get<int>();
    if (d.contains("noise")) c.dataset.noise = d["noise"].get<float>();
    if (d.contains("images_path")) c.dataset.images_path = d["images_path"].get<std::string>();
    if (d.contains("labels_path")) c.dataset.labels_path = d["labels_path"].get<std::string>();
    if (d.contains("path")) c.dataset.path = d["path"].get<std::string>();
    if (d.contains("limit")) c.dataset.limit = d["limit"].get<int>();
  }

  if (j.contains("split")) {
    const auto& s = j["split"];
    check_keys(s, "split", {"validation_fraction", "seed"});
    if (s.contains("validation_fraction")) c.validation_fraction = s["validation_fraction"].get<double>();
    if (s.contains("seed")) c.split_seed = s["seed"].get<std::uint64_t>();
  }

  if (j.contains("pretrain")) {
    const auto& p = j["pretrain"];
    check_keys(p, "pretrain", {"epochs", "batch_size", "learning_rate", "momentum", "seed"});
    if (p.contains("epochs")) c.pretrain.epochs = p["epochs"].get<int>();
    if (p.contains("batch_size")) c.pretrain.batch_size = p["batch_size"].get<int>();
    if (p.contains("learning_rate")) c.pretrain.learning_rate = p["learning_rate"].get<float>();
    if (p.contains("momentum")) c.pretrain.momentum = p["momentum"].get<float>();
    if (p.contains("seed")) c.pretrain.seed = p["seed"].get<std::uint64_t>();
  }

  if (j.contains("branches")) {
    const auto& b = j["branches"];
    check_keys(b, "branches", {"count", "placement", "num_blocks", "out_channels", "seed"});
    if (b.contains("count")) c.branch_count = b["count"].get<int>();
    if (b.contains("placement")) c.placement = b["placement"].get<std::string>();
    if (b.contains("num_blocks")) c.branch_blocks = b["num_blocks"].get<int>();
    if (b.contains("out_channels"))
      c.branch_channels = scalar_or_array<std::int64_t>(b["out_channels"], "branches/out_channels");
    if (b.contains("seed")) c.branch_seed = b["seed"].get<std::uint64_t>();
  }

  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, "train",
               {"epochs", "batch_size", "learning_rate", "momentum", "lambda", "cost_recursion", "seed"});
    if (t.contains("epochs")) c.train.epochs = t["epochs"].get<int>();
    if (t.contains("batch_size")) c.train.batch_size = t["batch_size"].get<int>();
    if (t.contains("learning_rate")) c.train.learning_rate = t["learning_rate"].get<float>();
    if (t.contains("momentum")) c.train.momentum = t["momentum"].get<float>();
    if (t.contains("lambda")) c.train.lambda = t["lambda"].get<float>();
    if (t.contains("cost_recursion")) c.train.cost_recursion = t["cost_recursion"].get<std::string>();
    if (t.contains("seed")) c.train.seed = t["seed"].get<std::uint64_t>();
  }

  if (j.contains("thresholds")) c.thresholds = scalar_or_array<float>(j["thresholds"], "thresholds");

  if (c.input.size() != 3) throw Error("config", "'input' must be [channels, height, width]");
  if (c.validation_fraction < 0.0 || c.validation_fraction > 1.0)
    throw Error("config", "'split/validation_fraction' must be in [0,1]");
  if (c.branch_count < 1) throw Error("config", "'branches/count' must be positive");
  c.resolved_channels();
  c.resolved_thresholds();
  return c;
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["arch"] = c.arch;
  j["num_classes"] = c.num_classes;
  j["input"] = c.input;

  nlohmann::ordered_json d;
  d["kind"] = c.dataset.kind;
  if (c.dataset.kind == "synthetic-blobs") {
    d["seed"] = c.dataset.seed;
    d["classes"] = c.dataset.classes;
    d["count"] = c.dataset.count;
    d["image_size"] = c.dataset.image_size;
    d["channels"] = c.dataset.channels;
    d["noise"] = c.dataset.noise;
  } else if (c.dataset.kind == "idx-images") {
    d["images_path"] = c.dataset.images_path;
    d["labels_path"] = c.dataset.labels_path;
  } else {
    d["path"] = c.dataset.path;
    d["limit"] = c.dataset.limit;
  }
  j["dataset"] = std::move(d);

  j["split"] = {{"validation_fraction", c.validation_fraction}, {"seed", c.split_seed}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"batch_size", c.pretrain.batch_size},
                   {"learning_rate", c.pretrain.learning_rate},
                   {"momentum", c.pretrain.momentum},
                   {"seed", c.pretrain.seed}};
  j["branches"] = {{"count", c.branch_count},
                   {"placement", c.placement},
                   {"num_blocks", c.branch_blocks},
                   {"out_channels", c.branch_channels},
                   {"seed", c.branch_seed}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"momentum", c.train.momentum},
                {"lambda", c.train.lambda},
                {"cost_recursion", c.train.cost_recursion},
                {"seed", c.train.seed}};
  j["thresholds"] = c.thresholds;
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config", "cannot open '" + path + "'");
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("config", "'" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::string& path, const ExperimentConfig& config) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("config", "cannot write '" + path + "'");
  out << config_to_json(config).dump(2) << "\n";
  if (!out) throw Error("config", "failed writing '" + path + "'");
}

}  // namespace ptee
