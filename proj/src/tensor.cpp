#include "deepdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace deepdiff {

using detail::Node;

namespace {

thread_local bool t_grad_enabled = true;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
  }
}

Node& in(Node& self, std::size_t k) { return *self.inputs[k]; }

}  // namespace

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << rows << 'x' << cols << ']';
  return os.str();
}

Tensor::Tensor() : node_(std::make_shared<Node>()) {}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Index rows, Index cols, bool requires_grad) {
  return Tensor(Matrix::Zero(rows, cols), requires_grad);
}

Tensor Tensor::full(Index rows, Index cols, double v) {
  return Tensor(Matrix::Constant(rows, cols, v));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Matrix::Constant(1, 1, v), requires_grad);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad) {
  const auto r = static_cast<Index>(rows.size());
  const auto c = r == 0 ? Index{0} : static_cast<Index>(rows.begin()->size());
  Matrix m(r, c);
  Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != c) throw DimensionError("from_rows: ragged rows");
    Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return Tensor(std::move(m), requires_grad);
}

Matrix& Tensor::mutable_value() {
  if (!is_leaf()) throw std::logic_error("mutable_value: tensor is not a leaf");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item: tensor is not scalar " + shape().str());
  return node_->value(0, 0);
}

const Matrix& Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("grad: no gradient has been accumulated");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) node_->grad.setZero();
}

namespace detail {

Node::~Node() {
  std::vector<std::shared_ptr<Node>> pending = std::move(inputs);
  while (!pending.empty()) {
    std::shared_ptr<Node> n = std::move(pending.back());
    pending.pop_back();
    if (n.use_count() == 1) {
      for (auto& child : n->inputs) pending.push_back(std::move(child));
      n->inputs.clear();
    }
  }
}

}  // namespace detail

Tensor make_op_result(const char* op, Matrix value, std::vector<Tensor> inputs,
                      std::function<void(Node&)> backward_fn) {
  if (!value.allFinite()) {
    throw NumericError(std::string(op) + ": non-finite value in forward pass");
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (t_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& t : inputs) node->inputs.push_back(t.node());
      node->backward = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

Tape Tape::linearize(const Tensor& root) {
  Tape tape;
  if (!root.requires_grad()) return tape;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; the graph can be thousands of nodes deep.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::replay(Node& root) const {
  for (Node* n : nodes_) {
    if (!n->is_leaf()) n->grad.resize(0, 0);
  }
  root.accumulate(Matrix::Ones(1, 1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = *it;
    // An interior node nothing flowed into contributes nothing.
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward: loss must be scalar, got " + loss.shape().str());
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward: loss does not depend on any trainable tensor");
  }
  Tape::linearize(loss).replay(*loss.node());
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + a.shape().str() + " x " +
                         b.shape().str());
  }
  // Outer-product-like shapes (tiny inner dimension) skip the blocked GEMM path.
  Matrix out = a.cols() <= 4 ? Matrix(a.value().lazyProduct(b.value()))
                             : Matrix(a.value() * b.value());
  return make_op_result("matmul", std::move(out), {a, b}, [](Node& self) {
    Node& l = in(self, 0);
    Node& r = in(self, 1);
    if (l.requires_grad) l.accumulate(self.grad * r.value.transpose());
    if (r.requires_grad) r.accumulate(l.value.transpose() * self.grad);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  return make_op_result("add", a.value() + b.value(), {a, b}, [](Node& self) {
    in(self, 0).accumulate(self.grad);
    in(self, 1).accumulate(self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  return make_op_result("sub", a.value() - b.value(), {a, b}, [](Node& self) {
    in(self, 0).accumulate(self.grad);
    in(self, 1).accumulate(-self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  return make_op_result("mul", a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    Node& l = in(self, 0);
    Node& r = in(self, 1);
    if (l.requires_grad) l.accumulate(self.grad.cwiseProduct(r.value));
    if (r.requires_grad) r.accumulate(self.grad.cwiseProduct(l.value));
  });
}

Tensor scale(const Tensor& a, double s) {
  return make_op_result("scale", a.value() * s, {a},
                        [s](Node& self) { in(self, 0).accumulate(self.grad * s); });
}

Tensor sigmoid(const Tensor& a) {
  Matrix y = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return make_op_result("sigmoid", std::move(y), {a}, [](Node& self) {
    const auto& y = self.value.array();
    in(self, 0).accumulate((self.grad.array() * y * (1.0 - y)).matrix());
  });
}

Tensor tanh(const Tensor& a) {
  return make_op_result("tanh", a.value().array().tanh().matrix(), {a}, [](Node& self) {
    const auto& y = self.value.array();
    in(self, 0).accumulate((self.grad.array() * (1.0 - y.square())).matrix());
  });
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor lstm_pointwise(const Tensor& pre, const Tensor& c_prev) {
  const Index d = c_prev.cols();
  if (pre.rows() != c_prev.rows() || pre.cols() != 4 * d) {
    throw DimensionError("lstm_pointwise: gates " + pre.shape().str() + " vs state " +
                         c_prev.shape().str());
  }
  const Index b = pre.rows();
  Matrix out(b, 2 * d);
  const Matrix& a = pre.value();
  const Matrix& cp = c_prev.value();
  for (Index r = 0; r < b; ++r) {
    for (Index k = 0; k < d; ++k) {
      const double i = stable_sigmoid(a(r, k));
      const double f = stable_sigmoid(a(r, d + k));
      const double g = std::tanh(a(r, 2 * d + k));
      const double o = stable_sigmoid(a(r, 3 * d + k));
      const double c = f * cp(r, k) + i * g;
      out(r, k) = o * std::tanh(c);
      out(r, d + k) = c;
    }
  }
  return make_op_result("lstm_pointwise", std::move(out), {pre, c_prev}, [d](Node& self) {
    Node& pn = in(self, 0);
    Node& cn = in(self, 1);
    const Index b = self.value.rows();
    Matrix ga(b, 4 * d);
    Matrix gcp(b, d);
    for (Index r = 0; r < b; ++r) {
      for (Index k = 0; k < d; ++k) {
        const double i = stable_sigmoid(pn.value(r, k));
        const double f = stable_sigmoid(pn.value(r, d + k));
        const double g = std::tanh(pn.value(r, 2 * d + k));
        const double o = stable_sigmoid(pn.value(r, 3 * d + k));
        const double th = std::tanh(self.value(r, d + k));
        const double gh = self.grad(r, k);
        const double dc = self.grad(r, d + k) + gh * o * (1.0 - th * th);
        ga(r, k) = dc * g * i * (1.0 - i);
        ga(r, d + k) = dc * cn.value(r, k) * f * (1.0 - f);
        ga(r, 2 * d + k) = dc * i * (1.0 - g * g);
        ga(r, 3 * d + k) = gh * th * o * (1.0 - o);
        gcp(r, k) = dc * f;
      }
    }
    if (pn.requires_grad) pn.accumulate(ga);
    if (cn.requires_grad) cn.accumulate(gcp);
  });
}

Tensor relu(const Tensor& a) {
  return make_op_result("relu", a.value().cwiseMax(0.0), {a}, [](Node& self) {
    Node& x = in(self, 0);
    x.accumulate((x.value.array() > 0.0).select(self.grad, 0.0).matrix());
  });
}

Tensor square(const Tensor& a) {
  return make_op_result("square", a.value().array().square().matrix(), {a}, [](Node& self) {
    Node& x = in(self, 0);
    x.accumulate((2.0 * self.grad.array() * x.value.array()).matrix());
  });
}

Tensor elementwise(Elementwise op, const std::vector<Tensor>& args, double factor) {
  const auto need = [&](std::size_t n) {
    if (args.size() != n) throw DimensionError("elementwise: wrong argument count");
  };
  switch (op) {
    case Elementwise::Sigmoid: need(1); return sigmoid(args[0]);
    case Elementwise::Tanh: need(1); return tanh(args[0]);
    case Elementwise::Scale: need(1); return scale(args[0], factor);
    case Elementwise::Add: need(2); return add(args[0], args[1]);
    case Elementwise::Mul: need(2); return mul(args[0], args[1]);
    case Elementwise::Sub: need(2); return sub(args[0], args[1]);
  }
  throw std::invalid_argument("elementwise: unknown op");
}

Tensor softmax(const Tensor& scores) {
  if (scores.size() == 0) throw DimensionError("softmax: empty input");
  Matrix y(scores.rows(), scores.cols());
  for (Index r = 0; r < scores.rows(); ++r) {
    const auto row = scores.value().row(r);
    const double mx = row.maxCoeff();
    y.row(r) = (row.array() - mx).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return make_op_result("softmax", std::move(y), {scores}, [](Node& self) {
    Matrix g(self.value.rows(), self.value.cols());
    for (Index r = 0; r < g.rows(); ++r) {
      const double dot = self.grad.row(r).dot(self.value.row(r));
      g.row(r) = (self.value.row(r).array() * (self.grad.row(r).array() - dot)).matrix();
    }
    in(self, 0).accumulate(g);
  });
}

Tensor log_softmax(const Tensor& scores) {
  if (scores.size() == 0) throw DimensionError("log_softmax: empty input");
  Matrix y(scores.rows(), scores.cols());
  for (Index r = 0; r < scores.rows(); ++r) {
    const auto row = scores.value().row(r);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    y.row(r) = (row.array() - lse).matrix();
  }
  return make_op_result("log_softmax", std::move(y), {scores}, [](Node& self) {
    Matrix g(self.value.rows(), self.value.cols());
    for (Index r = 0; r < g.rows(); ++r) {
      const double total = self.grad.row(r).sum();
      g.row(r) = self.grad.row(r) - (self.value.row(r).array().exp() * total).matrix();
    }
    in(self, 0).accumulate(g);
  });
}

Tensor concat(const std::vector<Tensor>& tensors, int axis) {
  if (tensors.empty()) throw DimensionError("concat: no inputs");
  if (axis != 0 && axis != 1) throw DimensionError("concat: axis must be 0 or 1");
  if (tensors.size() == 1) return tensors.front();
  Index rows = 0, cols = 0;
  const Shape first = tensors.front().shape();
  for (const auto& t : tensors) {
    if (axis == 0) {
      if (t.cols() != first.cols) {
        throw DimensionError("concat: column mismatch " + first.str() + " vs " + t.shape().str());
      }
      rows += t.rows();
      cols = first.cols;
    } else {
      if (t.rows() != first.rows) {
        throw DimensionError("concat: row mismatch " + first.str() + " vs " + t.shape().str());
      }
      cols += t.cols();
      rows = first.rows;
    }
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const auto& t : tensors) {
    if (axis == 0) {
      out.middleRows(offset, t.rows()) = t.value();
      offset += t.rows();
    } else {
      out.middleCols(offset, t.cols()) = t.value();
      offset += t.cols();
    }
  }
  return make_op_result("concat", std::move(out), tensors, [axis](Node& self) {
    Index off = 0;
    for (auto& input : self.inputs) {
      if (axis == 0) {
        const Index n = input->value.rows();
        input->accumulate(self.grad.middleRows(off, n));
        off += n;
      } else {
        const Index n = input->value.cols();
        input->accumulate(self.grad.middleCols(off, n));
        off += n;
      }
    }
  });
}

Tensor slice_cols(const Tensor& a, Index begin, Index end) {
  if (begin < 0 || end > a.cols() || begin >= end) {
    throw DimensionError("slice_cols: invalid range for " + a.shape().str());
  }
  return make_op_result("slice_cols", a.value().middleCols(begin, end - begin), {a},
                        [begin, end](Node& self) {
                          Node& x = in(self, 0);
                          if (x.grad.size() == 0) x.grad = Matrix::Zero(x.value.rows(), x.value.cols());
                          x.grad.middleCols(begin, end - begin) += self.grad;
                        });
}

Tensor slice_rows(const Tensor& a, Index begin, Index end) {
  if (begin < 0 || end > a.rows() || begin >= end) {
    throw DimensionError("slice_rows: invalid range for " + a.shape().str());
  }
  return make_op_result("slice_rows", a.value().middleRows(begin, end - begin), {a},
                        [begin, end](Node& self) {
                          Node& x = in(self, 0);
                          if (x.grad.size() == 0) x.grad = Matrix::Zero(x.value.rows(), x.value.cols());
                          x.grad.middleRows(begin, end - begin) += self.grad;
                        });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: cannot broadcast " + row.shape().str() + " onto " +
                         a.shape().str());
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_op_result("add_row", std::move(out), {a, row}, [](Node& self) {
    in(self, 0).accumulate(self.grad);
    if (in(self, 1).requires_grad) in(self, 1).accumulate(self.grad.colwise().sum());
  });
}

Tensor mul_col(const Tensor& a, const Tensor& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw DimensionError("mul_col: cannot broadcast " + col.shape().str() + " onto " +
                         a.shape().str());
  }
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return make_op_result("mul_col", std::move(out), {a, col}, [](Node& self) {
    Node& x = in(self, 0);
    Node& c = in(self, 1);
    if (x.requires_grad) {
      x.accumulate((self.grad.array().colwise() * c.value.col(0).array()).matrix());
    }
    if (c.requires_grad) c.accumulate(self.grad.cwiseProduct(x.value).rowwise().sum());
  });
}

Tensor weighted_sum(const std::vector<Tensor>& steps, const Tensor& weights) {
  if (steps.empty()) throw DimensionError("weighted_sum: no steps");
  const Index batch = steps.front().rows();
  const Index width = steps.front().cols();
  if (weights.rows() != batch || weights.cols() != static_cast<Index>(steps.size())) {
    throw DimensionError("weighted_sum: weights " + weights.shape().str() +
                         " do not match steps");
  }
  Matrix out = Matrix::Zero(batch, width);
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (steps[t].shape() != Shape{batch, width}) {
      throw DimensionError("weighted_sum: step shape mismatch " + steps[t].shape().str());
    }
    out += (steps[t].value().array().colwise() *
            weights.value().col(static_cast<Index>(t)).array())
               .matrix();
  }
  std::vector<Tensor> inputs(steps);
  inputs.push_back(weights);
  return make_op_result("weighted_sum", std::move(out), std::move(inputs), [](Node& self) {
    const std::size_t n = self.inputs.size() - 1;
    Node& w = *self.inputs.back();
    Matrix gw;
    if (w.requires_grad) gw.setZero(w.value.rows(), w.value.cols());
    for (std::size_t t = 0; t < n; ++t) {
      Node& step = *self.inputs[t];
      const auto col = w.value.col(static_cast<Index>(t)).array();
      if (step.requires_grad) step.accumulate((self.grad.array().colwise() * col).matrix());
      if (w.requires_grad) {
        gw.col(static_cast<Index>(t)) = self.grad.cwiseProduct(step.value).rowwise().sum();
      }
    }
    if (w.requires_grad) w.accumulate(gw);
  });
}

Tensor row_norm(const Tensor& a) {
  Matrix out = a.value().rowwise().norm();
  return make_op_result("row_norm", std::move(out), {a}, [](Node& self) {
    Node& x = in(self, 0);
    Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
    for (Index r = 0; r < g.rows(); ++r) {
      const double n = self.value(r, 0);
      if (n > 0.0) g.row(r) = x.value.row(r) * (self.grad(r, 0) / n);
    }
    x.accumulate(g);
  });
}

Tensor row_sum(const Tensor& a) {
  Matrix out = a.value().rowwise().sum();
  return make_op_result("row_sum", std::move(out), {a}, [](Node& self) {
    Node& x = in(self, 0);
    x.accumulate(self.grad.col(0).replicate(1, x.value.cols()));
  });
}

Tensor sum(const Tensor& a) {
  return make_op_result("sum", Matrix::Constant(1, 1, a.value().sum()), {a}, [](Node& self) {
    Node& x = in(self, 0);
    x.accumulate(Matrix::Constant(x.value.rows(), x.value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean: empty tensor");
  const double n = static_cast<double>(a.size());
  return make_op_result("mean", Matrix::Constant(1, 1, a.value().sum() / n), {a},
                        [n](Node& self) {
                          Node& x = in(self, 0);
                          x.accumulate(
                              Matrix::Constant(x.value.rows(), x.value.cols(), self.grad(0, 0) / n));
                        });
}

}  // namespace deepdiff
