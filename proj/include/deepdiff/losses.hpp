#pragma once

#include "deepdiff/tensor.hpp"
#include "deepdiff/variant.hpp"

#include <optional>
#include <span>
#include <vector>

namespace deepdiff {

/// S = 1 marks a differentially regulated ("dissimilar") gene.
enum class SimilarityLabel : int { Similar = 0, Dissimilar = 1 };

/// Dissimilar iff |y_diff| >= 2.
SimilarityLabel similarity_label(double y_diff);

struct LossWeights {
  double diff = 1.0;
  double cell_aux = 1.0;
  double siamese = 1.0;
  double margin = 2.0;
  // Use ½R² for similar pairs instead of the default ½R.
  bool squared_similar_term = false;
};

double mse_loss(std::span<const double> preds, std::span<const double> targets);
double cell_aux_loss(std::span<const double> preds_a, std::span<const double> targets_a,
                     std::span<const double> preds_b, std::span<const double> targets_b);
double siamese_distance(std::span<const double> ea, std::span<const double> eb);
/// (1-S)·½·R + S·½·max(0, m-R)²
double contrastive_loss(double distance, SimilarityLabel s, double margin,
                        bool squared_similar_term = false);
/// -log softmax(logits)[class]; label -1 selects index 0, +1 index 1.
double nll_classification_loss(std::span<const double> logits, int label);

// Differentiable forms over batches.

/// preds and targets are B×1.
Tensor mse_loss(const Tensor& preds, const Tensor& targets);
/// Euclidean distance between matching rows, B×1.
Tensor siamese_distance(const Tensor& ea, const Tensor& eb);
/// Batch mean of the contrastive loss.
Tensor contrastive_loss(const Tensor& distances, std::span<const SimilarityLabel> labels,
                        double margin, bool squared_similar_term = false);
/// Batch mean NLL; logits are B×2, labels in {-1, +1}.
Tensor nll_classification_loss(const Tensor& logits, std::span<const int> labels);

struct LossComponents {
  std::optional<Tensor> diff;
  std::optional<Tensor> cell_aux;
  std::optional<Tensor> siamese;
};

/// Weighted sum of the components the variant trains on. Throws when a
/// required component is missing.
Tensor total_loss(Variant variant, const LossComponents& components, const LossWeights& weights);
double total_loss(Variant variant, std::optional<double> diff, std::optional<double> cell_aux,
                  std::optional<double> siamese, const LossWeights& weights);

}  // namespace deepdiff
