#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepdiff {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Shape {
  Index rows = 0;
  Index cols = 0;

  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward operation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // empty until the first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into inputs[k]->grad.
  std::function<void(Node&)> backward;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;
  // Unlinks inputs iteratively so long chains do not recurse on destruction.
  ~Node();

  bool is_leaf() const { return inputs.empty(); }

  template <typename Expr>
  void accumulate(const Expr& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

}  // namespace detail

/// Handle to a node in the reverse-mode graph. Copies alias the same node.
///
/// Leaves created with requires_grad=true are trainable parameters: their
/// gradient buffers accumulate across backward() calls until zero_grad().
/// Tensors produced by operations remember their inputs so backward() can
/// replay the graph.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false);
  static Tensor full(Index rows, Index cols, double v);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows,
                          bool requires_grad = false);

  Shape shape() const { return {rows(), cols()}; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }

  const Matrix& value() const { return node_->value; }
  // In-place access for optimizers and checkpoint loading. Leaves only.
  Matrix& mutable_value();
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }
  bool has_grad() const { return node_->grad.size() != 0; }
  const Matrix& grad() const;
  void zero_grad();

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_op_result(const char*, Matrix, std::vector<Tensor>,
                               std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

/// Records a new operation node. Throws NumericError on non-finite output.
Tensor make_op_result(const char* op, Matrix value, std::vector<Tensor> inputs,
                      std::function<void(detail::Node&)> backward);

/// Topologically ordered list of the operations reachable from a root.
class Tape {
 public:
  static Tape linearize(const Tensor& root);

  const std::vector<detail::Node*>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  // Runs every recorded backward rule exactly once, in reverse order.
  void replay(detail::Node& root) const;

 private:
  std::vector<detail::Node*> nodes_;
};

/// Populates grad on every requires_grad tensor reachable from loss.
/// Leaf gradients accumulate across calls.
void backward(const Tensor& loss);

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Operations. All shapes are 2-D; vectors are 1×n or n×1.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);

enum class Elementwise { Sigmoid, Tanh, Add, Mul, Sub, Scale };
/// Dispatches to the named elementwise op. Unary ops take one argument;
/// Scale takes one argument and `factor`.
Tensor elementwise(Elementwise op, const std::vector<Tensor>& args, double factor = 1.0);

/// Row-wise softmax with max subtraction.
Tensor softmax(const Tensor& scores);
Tensor log_softmax(const Tensor& scores);

/// axis 0 stacks rows, axis 1 stacks columns.
Tensor concat(const std::vector<Tensor>& tensors, int axis);
Tensor slice_cols(const Tensor& a, Index begin, Index end);

/// Fused LSTM cell nonlinearity. pre is B×4D gate pre-activations packed
/// [i, f, g, o]; c_prev is B×D. Returns B×2D holding [h, c].
Tensor lstm_pointwise(const Tensor& pre, const Tensor& c_prev);
Tensor slice_rows(const Tensor& a, Index begin, Index end);

/// a (B×n) plus a 1×n row broadcast over every row.
Tensor add_row(const Tensor& a, const Tensor& row);
/// a (B×n) with row b multiplied by col(b) (col is B×1).
Tensor mul_col(const Tensor& a, const Tensor& col);
/// Σ_t weights[:, t] ⊙ steps[t]; steps are B×d, weights B×T.
Tensor weighted_sum(const std::vector<Tensor>& steps, const Tensor& weights);
/// Euclidean norm of each row, B×1. The gradient at a zero row is zero.
Tensor row_norm(const Tensor& a);
Tensor row_sum(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

}  // namespace deepdiff
