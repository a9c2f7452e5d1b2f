#include "deepdiff/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace deepdiff {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.empty() || a.size() != b.size()) {
    throw std::invalid_argument(std::string(op) + ": lists must be nonempty and equal length (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                                ")");
  }
}

}  // namespace

SimilarityLabel similarity_label(double y_diff) {
  if (!std::isfinite(y_diff)) throw std::invalid_argument("similarity_label: non-finite y_diff");
  return (y_diff <= -2.0 || y_diff >= 2.0) ? SimilarityLabel::Dissimilar
                                           : SimilarityLabel::Similar;
}

double mse_loss(std::span<const double> preds, std::span<const double> targets) {
  check_pair(preds, targets, "mse_loss");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = targets[i] - preds[i];
    total += d * d;
  }
  return total / static_cast<double>(preds.size());
}

double cell_aux_loss(std::span<const double> preds_a, std::span<const double> targets_a,
                     std::span<const double> preds_b, std::span<const double> targets_b) {
  return mse_loss(preds_a, targets_a) + mse_loss(preds_b, targets_b);
}

double siamese_distance(std::span<const double> ea, std::span<const double> eb) {
  if (ea.size() != eb.size()) {
    throw std::invalid_argument("siamese_distance: length mismatch " + std::to_string(ea.size()) +
                                " vs " + std::to_string(eb.size()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    const double d = ea[i] - eb[i];
    total += d * d;
  }
  return std::sqrt(total);
}

double contrastive_loss(double distance, SimilarityLabel s, double margin,
                        bool squared_similar_term) {
  if (distance < 0.0) throw std::invalid_argument("contrastive_loss: negative distance");
  if (!(margin > 0.0)) throw std::invalid_argument("contrastive_loss: margin must be positive");
  if (s == SimilarityLabel::Similar) {
    return 0.5 * (squared_similar_term ? distance * distance : distance);
  }
  const double hinge = std::max(0.0, margin - distance);
  return 0.5 * hinge * hinge;
}

double nll_classification_loss(std::span<const double> logits, int label) {
  if (logits.size() != 2) throw std::invalid_argument("nll: expected two logits");
  if (label != -1 && label != 1) throw std::invalid_argument("nll: label must be -1 or +1");
  const double mx = std::max(logits[0], logits[1]);
  const double lse = mx + std::log(std::exp(logits[0] - mx) + std::exp(logits[1] - mx));
  return lse - logits[label == 1 ? 1 : 0];
}

Tensor mse_loss(const Tensor& preds, const Tensor& targets) {
  if (preds.shape() != targets.shape() || preds.size() == 0) {
    throw DimensionError("mse_loss: " + preds.shape().str() + " vs " + targets.shape().str());
  }
  return mean(square(sub(preds, targets)));
}

Tensor siamese_distance(const Tensor& ea, const Tensor& eb) { return row_norm(sub(ea, eb)); }

Tensor contrastive_loss(const Tensor& distances, std::span<const SimilarityLabel> labels,
                        double margin, bool squared_similar_term) {
  const auto b = distances.rows();
  if (distances.cols() != 1 || static_cast<std::size_t>(b) != labels.size()) {
    throw DimensionError("contrastive_loss: " + distances.shape().str() + " distances for " +
                         std::to_string(labels.size()) + " labels");
  }
  if (!(margin > 0.0)) throw std::invalid_argument("contrastive_loss: margin must be positive");
  Matrix similar(b, 1), dissimilar(b, 1);
  for (Index i = 0; i < b; ++i) {
    const bool s = labels[static_cast<std::size_t>(i)] == SimilarityLabel::Dissimilar;
    similar(i, 0) = s ? 0.0 : 0.5;
    dissimilar(i, 0) = s ? 0.5 : 0.0;
  }
  const Tensor pull = squared_similar_term ? square(distances) : distances;
  const Tensor hinge = relu(sub(Tensor::full(b, 1, margin), distances));
  const Tensor per_sample =
      add(mul(Tensor(std::move(similar)), pull), mul(Tensor(std::move(dissimilar)), square(hinge)));
  return mean(per_sample);
}

Tensor nll_classification_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.cols() != 2 || static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw DimensionError("nll: " + logits.shape().str() + " logits for " +
                         std::to_string(labels.size()) + " labels");
  }
  Matrix pick = Matrix::Zero(logits.rows(), 2);
  for (Index i = 0; i < logits.rows(); ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label != -1 && label != 1) throw std::invalid_argument("nll: label must be -1 or +1");
    pick(i, label == 1 ? 1 : 0) = -1.0;
  }
  return mean(row_sum(mul(log_softmax(logits), Tensor(std::move(pick)))));
}

namespace {

struct Required {
  bool cell_aux;
  bool siamese;
};

Required required_terms(Variant v) { return {has_cell_towers(v), has_siamese(v)}; }

}  // namespace

Tensor total_loss(Variant variant, const LossComponents& c, const LossWeights& w) {
  const Required need = required_terms(variant);
  if (!c.diff) throw std::invalid_argument("total_loss: missing diff loss");
  if (need.cell_aux && !c.cell_aux) {
    throw std::invalid_argument("total_loss: variant " + std::string(variant_tag(variant)) +
                                " needs the cell-specific auxiliary loss");
  }
  if (need.siamese && !c.siamese) {
    throw std::invalid_argument("total_loss: variant " + std::string(variant_tag(variant)) +
                                " needs the contrastive loss");
  }
  Tensor total = scale(*c.diff, w.diff);
  if (need.cell_aux) total = add(total, scale(*c.cell_aux, w.cell_aux));
  if (need.siamese) total = add(total, scale(*c.siamese, w.siamese));
  return total;
}

double total_loss(Variant variant, std::optional<double> diff, std::optional<double> cell_aux,
                  std::optional<double> siamese, const LossWeights& w) {
  const Required need = required_terms(variant);
  if (!diff) throw std::invalid_argument("total_loss: missing diff loss");
  if (need.cell_aux && !cell_aux) throw std::invalid_argument("total_loss: missing cell aux loss");
  if (need.siamese && !siamese) throw std::invalid_argument("total_loss: missing contrastive loss");
  double total = w.diff * *diff;
  if (need.cell_aux) total += w.cell_aux * *cell_aux;
  if (need.siamese) total += w.siamese * *siamese;
  return total;
}

}  // namespace deepdiff
