#pragma once

#include "deepdiff/data.hpp"
#include "deepdiff/layers.hpp"
#include "deepdiff/variant.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace deepdiff {

struct ModelConfig {
  Variant variant = Variant::RawD;
  int marks = 5;
  int bins = 200;
  int level1_hidden = 32;  // D; Level I outputs are 2D wide
  int level2_hidden = 16;
  int mlp_hidden = 16;
  double dropout = 0.5;
  double forget_bias = 1.0;
  bool classification_aux = false;  // per-cell heads emit 2 logits
  std::uint64_t seed = 0;
};

/// One BiLSTM and one attention pool per input row.
class LevelIEmbedding {
 public:
  struct Output {
    std::vector<Tensor> summaries;  // R entries, B×2D
    std::vector<Tensor> alphas;     // R entries, B×T
  };

  LevelIEmbedding(int rows, Index hidden, Rng& rng, double forget_bias);

  int rows() const { return static_cast<int>(lstms_.size()); }
  Index output_size() const { return lstms_.front().output_size(); }

  /// rows[j] is B×T: row j of every sample in the batch.
  Output forward(const std::vector<Tensor>& rows) const;

  BiLstm& lstm(int j) { return lstms_.at(static_cast<std::size_t>(j)); }
  AttentionPool& pool(int j) { return pools_.at(static_cast<std::size_t>(j)); }
  void collect_parameters(const std::string& prefix, ParameterList& out) const;

 private:
  std::vector<BiLstm> lstms_;
  std::vector<AttentionPool> pools_;
};

/// A BiLSTM over the Level I summaries followed by attention pooling.
class LevelIIEmbedding {
 public:
  struct Output {
    Tensor v;     // B×2H
    Tensor beta;  // B×R
  };

  LevelIIEmbedding(Index input_size, Index hidden, Rng& rng, double forget_bias);

  Index output_size() const { return lstm_.output_size(); }
  Output forward(const std::vector<Tensor>& summaries) const;

  BiLstm& lstm() { return lstm_; }
  AttentionPool& pool() { return pool_; }
  void collect_parameters(const std::string& prefix, ParameterList& out) const;

 private:
  BiLstm lstm_;
  AttentionPool pool_;
};

/// Inputs for a batch: row j of XA (and XB) for every sample, B×T each.
struct Batch {
  std::vector<Tensor> xa_rows;
  std::vector<Tensor> xb_rows;

  Index size() const { return xa_rows.empty() ? 0 : xa_rows.front().rows(); }
};

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);
Batch make_batch(const Matrix& xa, const Matrix& xb);

struct BinAttention {
  std::string module;
  std::vector<std::string> labels;  // one per row
  std::vector<Matrix> alpha;        // per row, B×T
};

struct MarkAttention {
  std::string module;
  std::vector<std::string> labels;  // one per Level II position
  Matrix beta;                      // B×R
};

struct Prediction {
  Tensor diff;  // B×1
  std::optional<Tensor> cell_a;  // B×1, or B×2 logits in classification mode
  std::optional<Tensor> cell_b;
  std::optional<Tensor> siamese_a;  // B×(M·2D) concatenated Level I summaries
  std::optional<Tensor> siamese_b;
  std::vector<BinAttention> bins;
  std::vector<MarkAttention> marks;
};

/// Attention weights of a single gene.
struct AttentionRecord {
  struct Bins {
    std::string module;
    std::vector<std::string> labels;
    Matrix alpha;  // R×T
  };
  struct Marks {
    std::string module;
    std::vector<std::string> labels;
    std::vector<double> beta;
  };
  std::string gene_id;
  std::vector<Bins> bins;
  std::vector<Marks> marks;
};

AttentionRecord attention_record(const Prediction& p, Index sample, std::string gene_id);

class DeepDiffModel {
 public:
  explicit DeepDiffModel(const ModelConfig& config);

  DeepDiffModel(DeepDiffModel&&) = default;
  DeepDiffModel& operator=(DeepDiffModel&&) = default;
  DeepDiffModel(const DeepDiffModel&) = delete;
  DeepDiffModel& operator=(const DeepDiffModel&) = delete;

  const ModelConfig& config() const { return config_; }
  Variant variant() const { return config_.variant; }

  Prediction forward(const Batch& batch, const ForwardContext& ctx) const;

  /// Eval-mode forward of one gene.
  AttentionRecord extract_attention(const GeneSample& sample) const;

  /// Named trainable tensors; tied blocks appear once.
  ParameterList parameters() const;

  // Sub-modules; nullptr when absent from the variant.
  LevelIEmbedding* level1_raw() { return f1_raw_.get(); }
  LevelIEmbedding* level1_a() { return f1_a_.get(); }
  LevelIEmbedding* level1_b() { return f1_b_.get(); }
  LevelIIEmbedding* level2_raw() { return f2_raw_.get(); }
  LevelIIEmbedding* level2_a() { return f2_a_.get(); }
  LevelIIEmbedding* level2_b() { return f2_b_.get(); }
  MlpHead* diff_head() { return head_diff_.get(); }
  MlpHead* head_a() { return head_a_.get(); }
  MlpHead* head_b() { return head_b_.get(); }
  bool level1_tied() const { return f1_a_ && f1_a_ == f1_b_; }

  /// Row labels of the raw tower's Level I input.
  std::vector<std::string> raw_row_labels() const;

 private:
  ModelConfig config_;
  Dropout dropout_;
  std::shared_ptr<LevelIEmbedding> f1_raw_;
  std::shared_ptr<LevelIEmbedding> f1_a_;
  std::shared_ptr<LevelIEmbedding> f1_b_;  // same object as f1_a_ when tied
  std::shared_ptr<LevelIIEmbedding> f2_raw_;
  std::shared_ptr<LevelIIEmbedding> f2_a_;
  std::shared_ptr<LevelIIEmbedding> f2_b_;
  std::shared_ptr<MlpHead> head_diff_;
  std::shared_ptr<MlpHead> head_a_;
  std::shared_ptr<MlpHead> head_b_;
};

/// The single-matrix architecture f_mlp(f2(f1(X))). Copies of the components
/// alias their parameters, so a network built from a model's raw tower shares
/// that model's weights.
class SingleMatrixNetwork {
 public:
  SingleMatrixNetwork(LevelIEmbedding f1, LevelIIEmbedding f2, MlpHead head, double dropout);

  /// rows[j] is B×T. Returns the B×1 prediction.
  Tensor forward(const std::vector<Tensor>& rows, const ForwardContext& ctx) const;

 private:
  LevelIEmbedding f1_;
  LevelIIEmbedding f2_;
  MlpHead head_;
  Dropout dropout_;
};

}  // namespace deepdiff
