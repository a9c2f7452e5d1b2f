#pragma once

#include "deepdiff/data.hpp"
#include "deepdiff/model.hpp"
#include "deepdiff/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace deepdiff {

/// Self-describing JSON container: format tag, variant, hyperparameters,
/// fold definition, named parameter tensors, optimizer state and the report
/// recorded at training time. Numbers are written in shortest round-trip
/// form, so load followed by save reproduces the file byte for byte.
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::size_t dataset_size = 0;
  std::uint64_t split_seed = 0;
  FoldSizes fold_sizes;
  std::vector<std::pair<std::string, Matrix>> parameters;
  nlohmann::ordered_json optimizer;  // null when absent
  nlohmann::ordered_json report;     // null when absent
};

inline constexpr const char* kCheckpointFormat = "deepdiff-checkpoint";
inline constexpr int kCheckpointVersion = 1;

nlohmann::ordered_json to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::ordered_json& j);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies the model's current parameters into a checkpoint.
std::vector<std::pair<std::string, Matrix>> export_parameters(const DeepDiffModel& model);

/// Builds a model from the checkpoint's configuration and loads its
/// parameters, checking names and shapes.
DeepDiffModel restore_model(const Checkpoint& ckpt);

}  // namespace deepdiff
