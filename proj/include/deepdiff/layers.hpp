#pragma once

#include "deepdiff/tensor.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace deepdiff {

using Rng = std::mt19937_64;

/// One time step per entry, each B×features.
using Sequence = std::vector<Tensor>;

struct NamedParameter {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedParameter>;

/// Per-forward switches shared by every layer of a model.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Matrix uniform_init(Index rows, Index cols, Index fan_in, Rng& rng);

/// Standard LSTM cell. Gate columns are packed as [input, forget, candidate, output].
class LstmCell {
 public:
  struct State {
    Tensor h;
    Tensor c;
  };

  LstmCell(Index input_size, Index hidden_size, Rng& rng, double forget_bias = 1.0);

  Index input_size() const { return input_weights_.rows(); }
  Index hidden_size() const { return recurrent_weights_.rows(); }

  State initial_state(Index batch) const;
  /// x is B×input_size; prev.h and prev.c are B×hidden_size.
  State step(const Tensor& x, const State& prev) const;

  Tensor& input_weights() { return input_weights_; }          // input_size × 4D
  Tensor& recurrent_weights() { return recurrent_weights_; }  // D × 4D
  Tensor& bias() { return bias_; }                            // 1 × 4D

  void collect_parameters(const std::string& prefix, ParameterList& out) const;

 private:
  Tensor input_weights_;
  Tensor recurrent_weights_;
  Tensor bias_;
};

/// Runs a cell over a sequence from the zero state, returning every hidden state.
Sequence run_lstm(const LstmCell& cell, const Sequence& inputs);

class BiLstm {
 public:
  BiLstm(Index input_size, Index hidden_size, Rng& rng, double forget_bias = 1.0);

  Index hidden_size() const { return forward_.hidden_size(); }
  Index output_size() const { return 2 * hidden_size(); }

  /// Step t of the result is [forward h_t, backward h_t], B×2D.
  Sequence forward(const Sequence& inputs) const;

  LstmCell& forward_cell() { return forward_; }
  LstmCell& backward_cell() { return backward_; }
  const LstmCell& forward_cell() const { return forward_; }
  const LstmCell& backward_cell() const { return backward_; }

  void collect_parameters(const std::string& prefix, ParameterList& out) const;

 private:
  LstmCell forward_;
  LstmCell backward_;
};

/// Soft attention with a learned context vector.
class AttentionPool {
 public:
  struct Output {
    Tensor summary;  // B×d
    Tensor weights;  // B×T, rows sum to 1
  };

  AttentionPool(Index embedding_size, Rng& rng);

  Output forward(const Sequence& embeddings) const;

  Tensor& context() { return context_; }  // d×1
  const Tensor& context() const { return context_; }
  void collect_parameters(const std::string& prefix, ParameterList& out) const;

 private:
  Tensor context_;
};

/// Affine layers with tanh between them; the last layer is affine only.
class MlpHead {
 public:
  /// sizes = {input, hidden..., output}
  MlpHead(const std::vector<Index>& sizes, Rng& rng);

  Tensor forward(const Tensor& input) const;

  Index input_size() const { return layers_.front().weight.rows(); }
  Index output_size() const { return layers_.back().weight.cols(); }
  std::size_t depth() const { return layers_.size(); }
  Tensor& weight(std::size_t layer) { return layers_.at(layer).weight; }
  Tensor& bias(std::size_t layer) { return layers_.at(layer).bias; }

  void collect_parameters(const std::string& prefix, ParameterList& out) const;

 private:
  struct Affine {
    Tensor weight;  // in × out
    Tensor bias;    // 1 × out
  };
  std::vector<Affine> layers_;
};

/// Inverted dropout: survivors are scaled by 1/(1-p) in training mode.
class Dropout {
 public:
  explicit Dropout(double p);

  double probability() const { return p_; }
  Tensor apply(const Tensor& input, const ForwardContext& ctx) const;

 private:
  double p_;
};

}  // namespace deepdiff
