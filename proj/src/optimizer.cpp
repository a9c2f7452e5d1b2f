#include "deepdiff/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace deepdiff {

namespace {

const Matrix& gradient_of(const NamedParameter& p) {
  if (!p.tensor.has_grad()) throw std::runtime_error("optimizer: missing gradient for " + p.name);
  return p.tensor.grad();
}

}  // namespace

void zero_grad(const ParameterList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

double clip_grad_norm(const ParameterList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.tensor.has_grad()) sq += p.tensor.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& p : params) {
      if (p.tensor.has_grad()) p.tensor.node()->grad *= factor;
    }
  }
  return norm;
}

Sgd::Sgd(double learning_rate) : lr_(learning_rate) {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("sgd: learning rate must be >= 0");
}

void Sgd::step(const ParameterList& params) {
  for (const auto& p : params) {
    const Matrix& g = gradient_of(p);
    Tensor t = p.tensor;
    t.mutable_value() -= lr_ * g;
  }
}

nlohmann::ordered_json Sgd::state() const {
  return {{"kind", "sgd"}, {"learning_rate", lr_}};
}

void Sgd::load_state(const nlohmann::ordered_json& state) {
  if (state.at("kind") != "sgd") throw std::invalid_argument("sgd: state is not an sgd state");
  lr_ = state.at("learning_rate").get<double>();
}

Adam::Adam(AdamConfig config) : cfg_(config) {
  if (!(cfg_.learning_rate >= 0.0) || !(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) ||
      !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0) || !(cfg_.epsilon > 0.0)) {
    throw std::invalid_argument("adam: invalid hyperparameters");
  }
}

void Adam::step(const ParameterList& params) {
  for (const auto& p : params) gradient_of(p);
  ++t_;
  const double correction1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& p : params) {
    const Matrix& g = p.tensor.grad();
    auto [it, inserted] = moments_.try_emplace(p.name);
    Moments& mom = it->second;
    if (inserted) {
      mom.m = Matrix::Zero(g.rows(), g.cols());
      mom.v = Matrix::Zero(g.rows(), g.cols());
      order_.push_back(p.name);
    } else if (mom.m.rows() != g.rows() || mom.m.cols() != g.cols()) {
      throw DimensionError("adam: moment shape changed for " + p.name);
    }
    mom.m = cfg_.beta1 * mom.m + (1.0 - cfg_.beta1) * g;
    mom.v = cfg_.beta2 * mom.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Tensor t = p.tensor;
    Matrix& theta = t.mutable_value();
    const auto m_hat = mom.m.array() / correction1;
    const auto v_hat = mom.v.array() / correction2;
    theta.array() -= cfg_.learning_rate * m_hat / (v_hat.sqrt() + cfg_.epsilon);
  }
}

nlohmann::ordered_json Adam::state() const {
  nlohmann::ordered_json j;
  j["kind"] = "adam";
  j["learning_rate"] = cfg_.learning_rate;
  j["beta1"] = cfg_.beta1;
  j["beta2"] = cfg_.beta2;
  j["epsilon"] = cfg_.epsilon;
  j["step"] = t_;
  auto& moments = j["moments"];
  moments = nlohmann::ordered_json::array();
  for (const auto& name : order_) {
    const Moments& mom = moments_.at(name);
    moments.push_back({{"name", name}, {"m", matrix_to_json(mom.m)}, {"v", matrix_to_json(mom.v)}});
  }
  return j;
}

void Adam::load_state(const nlohmann::ordered_json& state) {
  if (state.at("kind") != "adam") throw std::invalid_argument("adam: state is not an adam state");
  cfg_.learning_rate = state.at("learning_rate").get<double>();
  cfg_.beta1 = state.at("beta1").get<double>();
  cfg_.beta2 = state.at("beta2").get<double>();
  cfg_.epsilon = state.at("epsilon").get<double>();
  t_ = state.at("step").get<std::int64_t>();
  moments_.clear();
  order_.clear();
  for (const auto& entry : state.at("moments")) {
    const auto name = entry.at("name").get<std::string>();
    moments_[name] = {matrix_from_json(entry.at("m")), matrix_from_json(entry.at("v"))};
    order_.push_back(name);
  }
}

nlohmann::ordered_json matrix_to_json(const Matrix& m) {
  nlohmann::ordered_json j;
  j["shape"] = {m.rows(), m.cols()};
  auto& data = j["data"];
  data = nlohmann::ordered_json::array();
  for (Index i = 0; i < m.size(); ++i) data.push_back(m.data()[i]);
  return j;
}

Matrix matrix_from_json(const nlohmann::ordered_json& j) {
  const auto& shape = j.at("shape");
  const auto rows = shape.at(0).get<Index>();
  const auto cols = shape.at(1).get<Index>();
  const auto& data = j.at("data");
  if (static_cast<Index>(data.size()) != rows * cols) {
    throw std::invalid_argument("matrix: data length does not match shape");
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = data[static_cast<std::size_t>(i)].get<double>();
  return m;
}

}  // namespace deepdiff
