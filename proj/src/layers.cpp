#include "deepdiff/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace deepdiff {

Matrix uniform_init(Index rows, Index cols, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

LstmCell::LstmCell(Index input_size, Index hidden_size, Rng& rng, double forget_bias) {
  if (input_size < 1 || hidden_size < 1) {
    throw std::invalid_argument("LstmCell: sizes must be positive");
  }
  input_weights_ = Tensor(uniform_init(input_size, 4 * hidden_size, input_size, rng), true);
  recurrent_weights_ =
      Tensor(uniform_init(hidden_size, 4 * hidden_size, hidden_size, rng), true);
  Matrix b = Matrix::Zero(1, 4 * hidden_size);
  b.middleCols(hidden_size, hidden_size).setConstant(forget_bias);
  bias_ = Tensor(std::move(b), true);
}

LstmCell::State LstmCell::initial_state(Index batch) const {
  return {Tensor::zeros(batch, hidden_size()), Tensor::zeros(batch, hidden_size())};
}

LstmCell::State LstmCell::step(const Tensor& x, const State& prev) const {
  const Index d = hidden_size();
  if (x.cols() != input_size()) {
    throw DimensionError("lstm_step: input " + x.shape().str() + " but cell expects " +
                         std::to_string(input_size()) + " features");
  }
  if (prev.h.shape() != Shape{x.rows(), d} || prev.c.shape() != Shape{x.rows(), d}) {
    throw DimensionError("lstm_step: state " + prev.h.shape().str() + "/" +
                         prev.c.shape().str() + " does not match hidden size " +
                         std::to_string(d));
  }
  const Tensor pre =
      add_row(add(matmul(x, input_weights_), matmul(prev.h, recurrent_weights_)), bias_);
  const Tensor hc = lstm_pointwise(pre, prev.c);
  Tensor h = slice_cols(hc, 0, d);
  Tensor c = slice_cols(hc, d, 2 * d);
  return {std::move(h), std::move(c)};
}

void LstmCell::collect_parameters(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".w_in", input_weights_});
  out.push_back({prefix + ".w_rec", recurrent_weights_});
  out.push_back({prefix + ".bias", bias_});
}

Sequence run_lstm(const LstmCell& cell, const Sequence& inputs) {
  if (inputs.empty()) throw DimensionError("lstm: empty sequence");
  Sequence out;
  out.reserve(inputs.size());
  auto state = cell.initial_state(inputs.front().rows());
  for (const auto& x : inputs) {
    state = cell.step(x, state);
    out.push_back(state.h);
  }
  return out;
}

BiLstm::BiLstm(Index input_size, Index hidden_size, Rng& rng, double forget_bias)
    : forward_(input_size, hidden_size, rng, forget_bias),
      backward_(input_size, hidden_size, rng, forget_bias) {}

Sequence BiLstm::forward(const Sequence& inputs) const {
  if (inputs.empty()) throw DimensionError("bilstm: empty sequence");
  const Sequence fwd = run_lstm(forward_, inputs);
  const Sequence reversed(inputs.rbegin(), inputs.rend());
  const Sequence bwd = run_lstm(backward_, reversed);
  const std::size_t n = inputs.size();
  Sequence out;
  out.reserve(n);
  for (std::size_t t = 0; t < n; ++t) out.push_back(concat({fwd[t], bwd[n - 1 - t]}, 1));
  return out;
}

void BiLstm::collect_parameters(const std::string& prefix, ParameterList& out) const {
  forward_.collect_parameters(prefix + ".fwd", out);
  backward_.collect_parameters(prefix + ".bwd", out);
}

AttentionPool::AttentionPool(Index embedding_size, Rng& rng)
    : context_(uniform_init(embedding_size, 1, embedding_size, rng), true) {}

AttentionPool::Output AttentionPool::forward(const Sequence& embeddings) const {
  if (embeddings.empty()) throw DimensionError("attention_pool: empty sequence");
  std::vector<Tensor> scores;
  scores.reserve(embeddings.size());
  for (const auto& e : embeddings) {
    if (e.cols() != context_.rows()) {
      throw DimensionError("attention_pool: embedding " + e.shape().str() +
                           " does not match context " + context_.shape().str());
    }
    scores.push_back(matmul(e, context_));
  }
  Tensor weights = softmax(concat(scores, 1));
  Tensor summary = weighted_sum(embeddings, weights);
  return {std::move(summary), std::move(weights)};
}

void AttentionPool::collect_parameters(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".context", context_});
}

MlpHead::MlpHead(const std::vector<Index>& sizes, Rng& rng) {
  if (sizes.size() < 2) throw std::invalid_argument("MlpHead: need input and output sizes");
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    layers_.push_back({Tensor(uniform_init(sizes[k], sizes[k + 1], sizes[k], rng), true),
                       Tensor::zeros(1, sizes[k + 1], true)});
  }
}

Tensor MlpHead::forward(const Tensor& input) const {
  if (input.cols() != input_size()) {
    throw DimensionError("mlp: input " + input.shape().str() + " but head expects " +
                         std::to_string(input_size()) + " features");
  }
  Tensor x = input;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    x = add_row(matmul(x, layers_[k].weight), layers_[k].bias);
    if (k + 1 < layers_.size()) x = tanh(x);
  }
  return x;
}

void MlpHead::collect_parameters(const std::string& prefix, ParameterList& out) const {
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    out.push_back({prefix + ".w" + std::to_string(k), layers_[k].weight});
    out.push_back({prefix + ".b" + std::to_string(k), layers_[k].bias});
  }
}

Dropout::Dropout(double p) : p_(p) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must lie in [0, 1)");
}

Tensor Dropout::apply(const Tensor& input, const ForwardContext& ctx) const {
  if (!ctx.training || p_ == 0.0) return input;
  if (ctx.rng == nullptr) throw std::logic_error("dropout: training mode needs an rng");
  std::bernoulli_distribution keep(1.0 - p_);
  const double survivor_scale = 1.0 / (1.0 - p_);
  Matrix mask(input.rows(), input.cols());
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = keep(*ctx.rng) ? survivor_scale : 0.0;
  }
  return mul(input, Tensor(std::move(mask)));
}

}  // namespace deepdiff
