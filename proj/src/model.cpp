#include "deepdiff/model.hpp"

#include <stdexcept>

namespace deepdiff {

namespace {

std::vector<std::string> prefixed(const std::string& prefix, const std::vector<std::string>& names) {
  std::vector<std::string> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(prefix + n);
  return out;
}

void append(std::vector<std::string>& dst, const std::vector<std::string>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

std::vector<Tensor> dropped(const std::vector<Tensor>& xs, const Dropout& d,
                            const ForwardContext& ctx) {
  std::vector<Tensor> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(d.apply(x, ctx));
  return out;
}

std::vector<Matrix> values(const std::vector<Tensor>& xs) {
  std::vector<Matrix> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(x.value());
  return out;
}

}  // namespace

LevelIEmbedding::LevelIEmbedding(int rows, Index hidden, Rng& rng, double forget_bias) {
  if (rows < 1) throw std::invalid_argument("LevelIEmbedding: need at least one row");
  for (int j = 0; j < rows; ++j) {
    lstms_.emplace_back(1, hidden, rng, forget_bias);
    pools_.emplace_back(2 * hidden, rng);
  }
}

LevelIEmbedding::Output LevelIEmbedding::forward(const std::vector<Tensor>& rows) const {
  if (static_cast<int>(rows.size()) != this->rows()) {
    throw DimensionError("level1: got " + std::to_string(rows.size()) + " rows, module has " +
                         std::to_string(this->rows()));
  }
  Output out;
  out.summaries.reserve(rows.size());
  out.alphas.reserve(rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const Tensor& x = rows[j];
    if (x.cols() < 1) throw DimensionError("level1: row has no bins");
    Sequence steps;
    steps.reserve(static_cast<std::size_t>(x.cols()));
    for (Index t = 0; t < x.cols(); ++t) steps.push_back(slice_cols(x, t, t + 1));
    auto pooled = pools_[j].forward(lstms_[j].forward(steps));
    out.summaries.push_back(std::move(pooled.summary));
    out.alphas.push_back(std::move(pooled.weights));
  }
  return out;
}

void LevelIEmbedding::collect_parameters(const std::string& prefix, ParameterList& out) const {
  for (std::size_t j = 0; j < lstms_.size(); ++j) {
    const std::string row = prefix + ".row" + std::to_string(j);
    lstms_[j].collect_parameters(row + ".lstm", out);
    pools_[j].collect_parameters(row + ".attn", out);
  }
}

LevelIIEmbedding::LevelIIEmbedding(Index input_size, Index hidden, Rng& rng, double forget_bias)
    : lstm_(input_size, hidden, rng, forget_bias), pool_(2 * hidden, rng) {}

LevelIIEmbedding::Output LevelIIEmbedding::forward(const std::vector<Tensor>& summaries) const {
  if (summaries.empty()) throw DimensionError("level2: no summaries");
  auto pooled = pool_.forward(lstm_.forward(summaries));
  return {std::move(pooled.summary), std::move(pooled.weights)};
}

void LevelIIEmbedding::collect_parameters(const std::string& prefix, ParameterList& out) const {
  lstm_.collect_parameters(prefix + ".lstm", out);
  pool_.collect_parameters(prefix + ".attn", out);
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const auto b = static_cast<Index>(indices.size());
  Batch batch;
  for (int j = 0; j < dataset.marks; ++j) {
    Matrix a(b, dataset.bins);
    Matrix c(b, dataset.bins);
    for (Index i = 0; i < b; ++i) {
      const auto& g = dataset.genes.at(indices[static_cast<std::size_t>(i)]);
      a.row(i) = g.xa.row(j);
      c.row(i) = g.xb.row(j);
    }
    batch.xa_rows.emplace_back(std::move(a));
    batch.xb_rows.emplace_back(std::move(c));
  }
  return batch;
}

Batch make_batch(const Matrix& xa, const Matrix& xb) {
  if (xa.rows() != xb.rows() || xa.cols() != xb.cols()) {
    throw DimensionError("make_batch: XA and XB shapes differ");
  }
  Batch batch;
  for (Index j = 0; j < xa.rows(); ++j) {
    batch.xa_rows.emplace_back(Matrix(xa.row(j)));
    batch.xb_rows.emplace_back(Matrix(xb.row(j)));
  }
  return batch;
}

AttentionRecord attention_record(const Prediction& p, Index sample, std::string gene_id) {
  AttentionRecord rec;
  rec.gene_id = std::move(gene_id);
  for (const auto& b : p.bins) {
    AttentionRecord::Bins out{b.module, b.labels, Matrix()};
    const Index t = b.alpha.front().cols();
    out.alpha.resize(static_cast<Index>(b.alpha.size()), t);
    for (std::size_t j = 0; j < b.alpha.size(); ++j) {
      out.alpha.row(static_cast<Index>(j)) = b.alpha[j].row(sample);
    }
    rec.bins.push_back(std::move(out));
  }
  for (const auto& m : p.marks) {
    AttentionRecord::Marks out{m.module, m.labels, {}};
    for (Index k = 0; k < m.beta.cols(); ++k) out.beta.push_back(m.beta(sample, k));
    rec.marks.push_back(std::move(out));
  }
  return rec;
}

DeepDiffModel::DeepDiffModel(const ModelConfig& config)
    : config_(config), dropout_(config.dropout) {
  if (config.marks < 1 || config.bins < 1) {
    throw std::invalid_argument("model: marks and bins must be positive");
  }
  Rng rng(config.seed);
  const Variant v = config.variant;
  const Index d1 = config.level1_hidden;
  const Index d2 = config.level2_hidden;
  const double fb = config.forget_bias;
  const int m = config.marks;
  const Index cell_outputs = config.classification_aux ? 2 : 1;

  if (has_raw_tower(v)) {
    const int rows = v == Variant::RawD ? m : v == Variant::RawC ? 2 * m : 3 * m;
    f1_raw_ = std::make_shared<LevelIEmbedding>(rows, d1, rng, fb);
  }
  if (has_cell_towers(v)) {
    f1_a_ = std::make_shared<LevelIEmbedding>(m, d1, rng, fb);
    f1_b_ = has_siamese(v) ? f1_a_ : std::make_shared<LevelIEmbedding>(m, d1, rng, fb);
    f2_a_ = std::make_shared<LevelIIEmbedding>(2 * d1, d2, rng, fb);
    f2_b_ = std::make_shared<LevelIIEmbedding>(2 * d1, d2, rng, fb);
    head_a_ = std::make_shared<MlpHead>(std::vector<Index>{2 * d2, cell_outputs}, rng);
    head_b_ = std::make_shared<MlpHead>(std::vector<Index>{2 * d2, cell_outputs}, rng);
  }
  if (f1_raw_) {
    f2_raw_ = std::make_shared<LevelIIEmbedding>(2 * d1, d2, rng, fb);
    head_diff_ = std::make_shared<MlpHead>(
        std::vector<Index>{2 * d2, static_cast<Index>(config.mlp_hidden), 1}, rng);
  } else {
    head_diff_ = std::make_shared<MlpHead>(
        std::vector<Index>{4 * d2, static_cast<Index>(config.mlp_hidden), 1}, rng);
  }
}

std::vector<std::string> DeepDiffModel::raw_row_labels() const {
  const auto names = mark_names(config_.marks);
  std::vector<std::string> labels;
  switch (config_.variant) {
    case Variant::RawD:
      append(labels, prefixed("A-B:", names));
      break;
    case Variant::RawC:
      append(labels, prefixed("A:", names));
      append(labels, prefixed("B:", names));
      break;
    case Variant::Raw:
    case Variant::RawAux:
    case Variant::RawAuxSiamese:
      append(labels, prefixed("A:", names));
      append(labels, prefixed("B:", names));
      append(labels, prefixed("A-B:", names));
      break;
    default:
      break;
  }
  return labels;
}

Prediction DeepDiffModel::forward(const Batch& batch, const ForwardContext& ctx) const {
  const int m = config_.marks;
  if (static_cast<int>(batch.xa_rows.size()) != m || static_cast<int>(batch.xb_rows.size()) != m) {
    throw DimensionError("forward: expected " + std::to_string(m) + " rows per cell, got " +
                         std::to_string(batch.xa_rows.size()) + "/" +
                         std::to_string(batch.xb_rows.size()));
  }
  for (int j = 0; j < m; ++j) {
    const Shape want{batch.size(), config_.bins};
    if (batch.xa_rows[j].shape() != want || batch.xb_rows[j].shape() != want) {
      throw DimensionError("forward: row " + std::to_string(j) + " has shape " +
                           batch.xa_rows[j].shape().str() + "/" + batch.xb_rows[j].shape().str() +
                           ", expected " + want.str());
    }
  }

  const Variant v = config_.variant;
  const bool raw_aux = v == Variant::RawAux || v == Variant::RawAuxSiamese;
  const auto names = mark_names(m);
  Prediction p;

  std::optional<LevelIEmbedding::Output> l1_raw;
  if (f1_raw_) {
    std::vector<Tensor> rows;
    const bool with_cells = v != Variant::RawD;
    const bool with_diff = v != Variant::RawC;
    if (with_cells) {
      rows.insert(rows.end(), batch.xa_rows.begin(), batch.xa_rows.end());
      rows.insert(rows.end(), batch.xb_rows.begin(), batch.xb_rows.end());
    }
    if (with_diff) {
      for (int j = 0; j < m; ++j) rows.push_back(sub(batch.xa_rows[j], batch.xb_rows[j]));
    }
    l1_raw = f1_raw_->forward(rows);
    p.bins.push_back({raw_aux ? "f1_d" : "f1", raw_row_labels(), values(l1_raw->alphas)});
  }

  std::vector<Tensor> dropped_a, dropped_b;
  std::optional<Tensor> v_a, v_b;
  if (f1_a_) {
    const auto l1a = f1_a_->forward(batch.xa_rows);
    const auto l1b = f1_b_->forward(batch.xb_rows);
    p.bins.push_back({"f1_a", prefixed("A:", names), values(l1a.alphas)});
    p.bins.push_back({"f1_b", prefixed("B:", names), values(l1b.alphas)});
    if (has_siamese(v)) {
      p.siamese_a = concat(l1a.summaries, 1);
      p.siamese_b = concat(l1b.summaries, 1);
    }
    dropped_a = dropped(l1a.summaries, dropout_, ctx);
    dropped_b = dropped(l1b.summaries, dropout_, ctx);
    const auto l2a = f2_a_->forward(dropped_a);
    const auto l2b = f2_b_->forward(dropped_b);
    p.marks.push_back({"f2_a", prefixed("A:", names), l2a.beta.value()});
    p.marks.push_back({"f2_b", prefixed("B:", names), l2b.beta.value()});
    v_a = dropout_.apply(l2a.v, ctx);
    v_b = dropout_.apply(l2b.v, ctx);
    p.cell_a = head_a_->forward(*v_a);
    p.cell_b = head_b_->forward(*v_b);
  }

  if (l1_raw) {
    std::vector<Tensor> seq = dropped(l1_raw->summaries, dropout_, ctx);
    std::vector<std::string> labels = raw_row_labels();
    if (raw_aux) {
      // Cell-tower summaries follow the difference tower's rows.
      seq.insert(seq.end(), dropped_a.begin(), dropped_a.end());
      seq.insert(seq.end(), dropped_b.begin(), dropped_b.end());
      labels = prefixed("f1_d:", labels);
      append(labels, prefixed("f1_a:A:", names));
      append(labels, prefixed("f1_b:B:", names));
    }
    const auto l2 = f2_raw_->forward(seq);
    p.marks.insert(p.marks.begin(), {raw_aux ? "f2_d" : "f2", labels, l2.beta.value()});
    p.diff = head_diff_->forward(dropout_.apply(l2.v, ctx));
  } else {
    p.diff = head_diff_->forward(concat({*v_a, *v_b}, 1));
  }
  return p;
}

AttentionRecord DeepDiffModel::extract_attention(const GeneSample& sample) const {
  NoGradGuard no_grad;
  const ForwardContext eval{};
  const Prediction p = forward(make_batch(sample.xa, sample.xb), eval);
  return attention_record(p, 0, sample.gene_id);
}

ParameterList DeepDiffModel::parameters() const {
  ParameterList out;
  if (f1_raw_) f1_raw_->collect_parameters(config_.variant == Variant::RawAux ||
                                                   config_.variant == Variant::RawAuxSiamese
                                               ? "f1_d"
                                               : "f1",
                                           out);
  if (f1_a_) {
    if (level1_tied()) {
      f1_a_->collect_parameters("f1_ab", out);
    } else {
      f1_a_->collect_parameters("f1_a", out);
      f1_b_->collect_parameters("f1_b", out);
    }
  }
  if (f2_raw_) f2_raw_->collect_parameters(f1_a_ ? "f2_d" : "f2", out);
  if (f2_a_) f2_a_->collect_parameters("f2_a", out);
  if (f2_b_) f2_b_->collect_parameters("f2_b", out);
  if (head_diff_) head_diff_->collect_parameters("head_diff", out);
  if (head_a_) head_a_->collect_parameters("head_a", out);
  if (head_b_) head_b_->collect_parameters("head_b", out);
  return out;
}

SingleMatrixNetwork::SingleMatrixNetwork(LevelIEmbedding f1, LevelIIEmbedding f2, MlpHead head,
                                         double dropout)
    : f1_(std::move(f1)), f2_(std::move(f2)), head_(std::move(head)), dropout_(dropout) {}

Tensor SingleMatrixNetwork::forward(const std::vector<Tensor>& rows,
                                    const ForwardContext& ctx) const {
  const auto level1 = f1_.forward(rows);
  const auto level2 = f2_.forward(dropped(level1.summaries, dropout_, ctx));
  return head_.forward(dropout_.apply(level2.v, ctx));
}

}  // namespace deepdiff
