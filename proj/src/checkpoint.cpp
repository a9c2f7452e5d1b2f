#include "deepdiff/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace deepdiff {

namespace {

nlohmann::ordered_json model_to_json(const ModelConfig& m) {
  return {{"variant", variant_tag(m.variant)},
          {"marks", m.marks},
          {"bins", m.bins},
          {"level1_hidden", m.level1_hidden},
          {"level2_hidden", m.level2_hidden},
          {"mlp_hidden", m.mlp_hidden},
          {"dropout", m.dropout},
          {"forget_bias", m.forget_bias},
          {"classification_aux", m.classification_aux},
          {"seed", m.seed}};
}

ModelConfig model_from_json(const nlohmann::ordered_json& j) {
  ModelConfig m;
  m.variant = parse_variant(j.at("variant").get<std::string>());
  m.marks = j.at("marks").get<int>();
  m.bins = j.at("bins").get<int>();
  m.level1_hidden = j.at("level1_hidden").get<int>();
  m.level2_hidden = j.at("level2_hidden").get<int>();
  m.mlp_hidden = j.at("mlp_hidden").get<int>();
  m.dropout = j.at("dropout").get<double>();
  m.forget_bias = j.at("forget_bias").get<double>();
  m.classification_aux = j.at("classification_aux").get<bool>();
  m.seed = j.at("seed").get<std::uint64_t>();
  return m;
}

}  // namespace

nlohmann::ordered_json to_json(const Checkpoint& c) {
  nlohmann::ordered_json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["model"] = model_to_json(c.model);
  j["train"] = to_json(c.train);
  j["folds"] = {{"dataset_size", c.dataset_size},
                {"seed", c.split_seed},
                {"train", c.fold_sizes.train},
                {"valid", c.fold_sizes.valid},
                {"test", c.fold_sizes.test}};
  auto& params = j["parameters"];
  params = nlohmann::ordered_json::array();
  for (const auto& [name, value] : c.parameters) {
    nlohmann::ordered_json p = matrix_to_json(value);
    p["name"] = name;
    params.push_back(std::move(p));
  }
  j["optimizer"] = c.optimizer;
  j["report"] = c.report;
  return j;
}

Checkpoint checkpoint_from_json(const nlohmann::ordered_json& j) {
  if (j.value("format", std::string()) != kCheckpointFormat) {
    throw std::invalid_argument("checkpoint: not a " + std::string(kCheckpointFormat) + " file");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw std::invalid_argument("checkpoint: unsupported version " + j.at("version").dump());
  }
  Checkpoint c;
  c.model = model_from_json(j.at("model"));
  c.train = train_config_from_json(j.at("train"));
  const auto& folds = j.at("folds");
  c.dataset_size = folds.at("dataset_size").get<std::size_t>();
  c.split_seed = folds.at("seed").get<std::uint64_t>();
  c.fold_sizes = {folds.at("train").get<std::size_t>(), folds.at("valid").get<std::size_t>(),
                  folds.at("test").get<std::size_t>()};
  for (const auto& p : j.at("parameters")) {
    c.parameters.emplace_back(p.at("name").get<std::string>(), matrix_from_json(p));
  }
  c.optimizer = j.at("optimizer");
  c.report = j.at("report");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << to_json(ckpt).dump(1) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

std::vector<std::pair<std::string, Matrix>> export_parameters(const DeepDiffModel& model) {
  std::vector<std::pair<std::string, Matrix>> out;
  for (const auto& p : model.parameters()) out.emplace_back(p.name, p.tensor.value());
  return out;
}

DeepDiffModel restore_model(const Checkpoint& ckpt) {
  DeepDiffModel model(ckpt.model);
  const ParameterList params = model.parameters();
  if (params.size() != ckpt.parameters.size()) {
    throw std::invalid_argument("checkpoint: " + std::to_string(ckpt.parameters.size()) +
                                " parameter tensors, model expects " +
                                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, value] = ckpt.parameters[i];
    if (name != params[i].name) {
      throw std::invalid_argument("checkpoint: parameter " + std::to_string(i) + " is '" + name +
                                  "', expected '" + params[i].name + "'");
    }
    Tensor t = params[i].tensor;
    Matrix& dst = t.mutable_value();
    if (dst.rows() != value.rows() || dst.cols() != value.cols()) {
      throw DimensionError("checkpoint: " + name + " has shape " +
                           Shape{value.rows(), value.cols()}.str() + ", expected " +
                           Shape{dst.rows(), dst.cols()}.str());
    }
    dst = value;
  }
  return model;
}

}  // namespace deepdiff
