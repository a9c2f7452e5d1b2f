#pragma once

#include "deepdiff/data.hpp"
#include "deepdiff/losses.hpp"
#include "deepdiff/model.hpp"
#include "deepdiff/optimizer.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepdiff {

enum class OptimizerKind { Adam, Sgd };

std::string_view optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
  Variant variant = Variant::RawD;
  int epochs = 100;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double dropout = 0.5;
  LossWeights loss;
  int level1_hidden = 32;
  int level2_hidden = 16;
  int mlp_hidden = 16;
  double forget_bias = 1.0;
  Normalization normalization = Normalization::None;
  bool classification_aux = false;
  int patience = 15;       // epochs without validation improvement; 0 disables
  double clip_norm = 0.0;  // 0 disables gradient clipping
  int threads = 1;         // evaluation fan-out
};

ModelConfig model_config(const TrainConfig& cfg, int marks, int bins);

nlohmann::ordered_json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);

class DegenerateInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Population-form Pearson correlation. Throws DegenerateInputError when
/// either list has zero variance.
double pearson(std::span<const double> preds, std::span<const double> targets);

struct Predictions {
  std::vector<double> diff;
  std::vector<double> cell_a;  // regression output, or P(+1) in classification mode
  std::vector<double> cell_b;
};

/// Eval-mode predictions in index order. Work is split into fixed chunks so
/// results do not depend on the thread count.
Predictions predict(const DeepDiffModel& model, const Dataset& dataset,
                    std::span<const std::size_t> indices, int threads = 1);

struct SplitMetrics {
  std::size_t count = 0;
  std::optional<double> pcc;  // empty when degenerate
  double mse = 0.0;
  std::optional<double> pcc_a;
  std::optional<double> pcc_b;
  std::optional<double> accuracy_a;  // classification mode
  std::optional<double> accuracy_b;
};

SplitMetrics evaluate(const DeepDiffModel& model, const Dataset& dataset,
                      std::span<const std::size_t> indices, int threads = 1);

nlohmann::ordered_json to_json(const SplitMetrics& m);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double diff_loss = 0.0;
  std::optional<double> cell_aux_loss;
  std::optional<double> siamese_loss;
  std::optional<double> valid_pcc;
  std::optional<double> valid_pcc_a;
  std::optional<double> valid_pcc_b;
};

nlohmann::ordered_json to_json(const EpochRecord& r);

struct EvalReport {
  std::vector<EpochRecord> epochs;
  int selected_epoch = -1;  // -1: no epoch produced a usable validation PCC
  SplitMetrics train;
  SplitMetrics valid;
  SplitMetrics test;
};

nlohmann::ordered_json to_json(const EvalReport& r);

struct TrainResult {
  EvalReport report;
  std::vector<Matrix> best_parameters;  // parameters() order
  nlohmann::ordered_json optimizer_state;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

std::vector<Matrix> snapshot(const ParameterList& params);
void restore(const ParameterList& params, const std::vector<Matrix>& values);

/// Mini-batch training with validation-based model selection. On return the
/// model holds the parameters of the selected epoch.
TrainResult train(DeepDiffModel& model, const Dataset& dataset, const FoldSplit& folds,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Loss of one batch, split into components; exposed for gradient checks.
struct BatchLoss {
  Tensor total;
  Tensor diff;
  std::optional<Tensor> cell_aux;
  std::optional<Tensor> siamese;
};

BatchLoss batch_loss(const DeepDiffModel& model, const Dataset& dataset,
                     std::span<const std::size_t> indices, const TrainConfig& cfg,
                     const ForwardContext& ctx);

struct ModuleAttentionMean {
  std::string module;
  std::vector<std::string> labels;
  std::vector<double> values;  // mean β per position
};

struct BinAttentionMean {
  std::string module;
  std::vector<std::string> labels;
  Matrix alpha;  // mean α, R×T
};

struct AttentionSet {
  std::string name;
  std::size_t count = 0;
  std::vector<ModuleAttentionMean> beta;
  std::vector<BinAttentionMean> alpha;
};

struct AttentionSummary {
  double threshold = 8.0;
  AttentionSet up;    // y_diff > threshold
  AttentionSet down;  // y_diff < -threshold
};

AttentionSummary attention_aggregate(const DeepDiffModel& model, const Dataset& dataset,
                                     std::span<const std::size_t> indices, double threshold,
                                     int threads = 1);

/// Mean of each record's β (and α) per module.
AttentionSet average_attention(std::string name, std::span<const AttentionRecord> records);

}  // namespace deepdiff
