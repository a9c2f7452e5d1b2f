#include "deepdiff/tensor.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace deepdiff;

namespace {

double sum_value(const Tensor& t) { return t.value().sum(); }

// Analytic gradient of loss_fn(params) w.r.t. each parameter, checked
// against central differences.
double max_grad_error(std::vector<Tensor> params, const std::function<Tensor()>& loss_fn) {
  for (auto& p : params) p.zero_grad();
  backward(loss_fn());
  double worst = 0.0;
  for (auto& p : params) {
    const Matrix g = p.grad();
    worst = std::max(worst, oracle::gradient_error(p, [&] {
                       NoGradGuard ng;
                       return loss_fn().item();
                     }, g));
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul values") {
  const Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
  const Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(eye, m).value() == m.value());
  CHECK(matmul(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{3}, {4}})).item() == 11.0);
  CHECK_THROWS_AS(matmul(m, Tensor::from_rows({{1, 2, 3}})), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  Tensor a(oracle::random_matrix(3, 4, rng), true);
  Tensor b(oracle::random_matrix(4, 2, rng), true);
  CHECK(max_grad_error({a, b}, [&] { return sum(matmul(a, b)); }) < 1e-6);
}

TEST_CASE("outer-product matmul path agrees with the general product") {
  Rng rng(2);
  const Matrix x = oracle::random_matrix(16, 1, rng);
  const Matrix w = oracle::random_matrix(1, 12, rng);
  const Matrix expected = x * w;
  CHECK((matmul(Tensor(x), Tensor(w)).value() - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("elementwise activations") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(tanh(Tensor::scalar(0.0)).item() == 0.0);
  Tensor x = Tensor::scalar(0.0, true);
  backward(sigmoid(x));
  CHECK(x.grad()(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
  // Extreme inputs stay finite.
  CHECK(sigmoid(Tensor::scalar(-800.0)).item() == 0.0);
  CHECK(sigmoid(Tensor::scalar(800.0)).item() == 1.0);

  Rng rng(3);
  Tensor a(oracle::random_matrix(3, 3, rng, -2, 2), true);
  Tensor b(oracle::random_matrix(3, 3, rng, -2, 2), true);
  CHECK(max_grad_error({a}, [&] { return sum(sigmoid(a)); }) < 1e-6);
  CHECK(max_grad_error({a}, [&] { return sum(tanh(a)); }) < 1e-6);
  CHECK(max_grad_error({a, b}, [&] { return sum(mul(a, b)); }) < 1e-6);
  CHECK(max_grad_error({a, b}, [&] { return sum(sub(square(a), b)); }) < 1e-6);
  CHECK(max_grad_error({a}, [&] { return sum(scale(a, -3.5)); }) < 1e-6);
}

TEST_CASE("elementwise dispatcher") {
  const Tensor a = Tensor::from_rows({{1, -2}});
  const Tensor b = Tensor::from_rows({{3, 4}});
  CHECK(elementwise(Elementwise::Add, {a, b}).value() == add(a, b).value());
  CHECK(elementwise(Elementwise::Mul, {a, b}).value() == mul(a, b).value());
  CHECK(elementwise(Elementwise::Scale, {a}, 2.0).value() == scale(a, 2.0).value());
  CHECK_THROWS_AS(elementwise(Elementwise::Add, {a}), DimensionError);
}

TEST_CASE("softmax") {
  const Matrix half = softmax(Tensor::from_rows({{0, 0}})).value();
  CHECK(half(0, 0) == 0.5);
  CHECK(half(0, 1) == 0.5);
  for (double c : {-1e3, 0.0, 7.25, 1e3}) {
    const Matrix s = softmax(Tensor::from_rows({{c, c, c}})).value();
    for (Index k = 0; k < 3; ++k) CHECK(std::abs(s(0, k) - 1.0 / 3.0) < 1e-15);
  }
  const Matrix s = softmax(Tensor::from_rows({{1, 2, 3}})).value();
  const auto ref = oracle::softmax({1.0L, 2.0L, 3.0L});
  for (Index k = 0; k < 3; ++k) CHECK(std::abs(s(0, k) - static_cast<double>(ref[k])) < 1e-12);

  Rng rng(5);
  Tensor x(oracle::random_matrix(4, 6, rng, -3, 3), true);
  Tensor w(oracle::random_matrix(4, 6, rng), false);
  CHECK(max_grad_error({x}, [&] { return sum(mul(softmax(x), w)); }) < 1e-6);
  CHECK(max_grad_error({x}, [&] { return sum(mul(log_softmax(x), w)); }) < 1e-6);
}

TEST_CASE("concat and slices") {
  Rng rng(7);
  Tensor a(oracle::random_matrix(1, 32, rng), true);
  Tensor b(oracle::random_matrix(1, 32, rng), true);
  CHECK(concat({a}, 1).same_node(a));
  const Tensor ab = concat({a, b}, 1);
  REQUIRE(ab.shape() == Shape{1, 64});
  CHECK(ab.value().leftCols(32) == a.value());
  CHECK(ab.value().rightCols(32) == b.value());
  CHECK_THROWS_AS(concat({a, Tensor::zeros(2, 2)}, 1), DimensionError);

  Tensor w(oracle::random_matrix(1, 64, rng), false);
  CHECK(max_grad_error({a, b}, [&] { return sum(mul(concat({a, b}, 1), w)); }) < 1e-6);
  Tensor m(oracle::random_matrix(5, 4, rng), true);
  Tensor n(oracle::random_matrix(2, 4, rng), true);
  CHECK(max_grad_error({m, n}, [&] {
          return sum(square(concat({slice_rows(m, 1, 4), n, slice_cols(concat({m, m}, 1), 2, 6)}, 0)));
        }) < 1e-6);
}

TEST_CASE("broadcast and reductions") {
  Rng rng(9);
  Tensor a(oracle::random_matrix(3, 4, rng), true);
  Tensor row(oracle::random_matrix(1, 4, rng), true);
  Tensor col(oracle::random_matrix(3, 1, rng), true);
  CHECK(max_grad_error({a, row}, [&] { return sum(square(add_row(a, row))); }) < 1e-6);
  CHECK(max_grad_error({a, col}, [&] { return sum(square(mul_col(a, col))); }) < 1e-6);
  CHECK(max_grad_error({a}, [&] { return sum(square(row_sum(a))); }) < 1e-6);
  CHECK(max_grad_error({a}, [&] { return mean(row_norm(a)); }) < 1e-6);
  CHECK(row_norm(Tensor::from_rows({{3, 4}})).item() == 5.0);

  Tensor z = Tensor::zeros(1, 3, true);
  backward(sum(row_norm(z)));
  CHECK(z.grad().isZero());
}

TEST_CASE("weighted sum") {
  Rng rng(4);
  std::vector<Tensor> steps;
  for (int t = 0; t < 5; ++t) steps.emplace_back(oracle::random_matrix(2, 3, rng), true);
  Tensor w(oracle::random_matrix(2, 5, rng), true);
  std::vector<Tensor> params = steps;
  params.push_back(w);
  CHECK(max_grad_error(params, [&] { return sum(square(weighted_sum(steps, w))); }) < 1e-6);
}

TEST_CASE("fused LSTM nonlinearity matches the unfused composition") {
  Rng rng(21);
  const Index d = 3;
  Tensor pre(oracle::random_matrix(2, 4 * d, rng, -2, 2), true);
  Tensor cp(oracle::random_matrix(2, d, rng), true);
  const Tensor hc = lstm_pointwise(pre, cp);
  const Tensor i = sigmoid(slice_cols(pre, 0, d));
  const Tensor f = sigmoid(slice_cols(pre, d, 2 * d));
  const Tensor g = tanh(slice_cols(pre, 2 * d, 3 * d));
  const Tensor o = sigmoid(slice_cols(pre, 3 * d, 4 * d));
  const Tensor c = add(mul(f, cp), mul(i, g));
  const Tensor h = mul(o, tanh(c));
  CHECK((hc.value().leftCols(d) - h.value()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((hc.value().rightCols(d) - c.value()).cwiseAbs().maxCoeff() < 1e-15);
  Tensor w(oracle::random_matrix(2, 2 * d, rng), false);
  CHECK(max_grad_error({pre, cp}, [&] { return sum(mul(lstm_pointwise(pre, cp), w)); }) < 1e-6);
}

TEST_CASE("backward basics") {
  Tensor theta(Matrix::Random(3, 2), true);
  backward(sum(theta));
  CHECK(theta.grad() == Matrix::Ones(3, 2));

  Tensor v = Tensor::from_rows({{1}, {2}}, true);
  backward(matmul(Tensor(v.value().transpose()), v));  // only the right factor is tracked
  v.zero_grad();
  // θᵀθ with both factors tracked through a transpose-free form: Σθ².
  backward(sum(square(v)));
  CHECK(v.grad()(0, 0) == 2.0);
  CHECK(v.grad()(1, 0) == 4.0);

  // Leaf gradients accumulate across calls until zero_grad.
  backward(sum(square(v)));
  CHECK(v.grad()(1, 0) == 8.0);
  v.zero_grad();
  CHECK(v.grad()(1, 0) == 0.0);

  CHECK_THROWS_AS(backward(square(v)), DimensionError);
  CHECK_THROWS(backward(sum(Tensor::zeros(2, 2))));
}

TEST_CASE("shared subexpressions are differentiated once per path") {
  // Diamond: y = a*x + b*x with x reused; dy/dx = a + b.
  Tensor x = Tensor::scalar(1.5, true);
  const Tensor a = Tensor::scalar(2.0);
  const Tensor b = Tensor::scalar(-0.5);
  const Tensor shared = tanh(x);
  backward(add(mul(a, shared), mul(b, shared)));
  const double t = std::tanh(1.5);
  CHECK(x.grad()(0, 0) == doctest::Approx(1.5 * (1 - t * t)).epsilon(1e-14));

  Tensor leaf = Tensor::scalar(0.3, true);
  const Tape tape = Tape::linearize(sum(mul(leaf, leaf)));
  CHECK(tape.size() == 3);  // leaf, mul, sum
}

TEST_CASE("deep chains do not overflow the stack") {
  Tensor x = Tensor::scalar(1.0, true);
  Tensor y = x;
  for (int k = 0; k < 200000; ++k) y = add(y, Tensor::scalar(0.0));
  backward(y);
  CHECK(x.grad()(0, 0) == 1.0);
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x = Tensor::scalar(2.0, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.is_leaf());
  }
  CHECK(grad_enabled());
}

TEST_CASE("non-finite forward values are rejected") {
  const Tensor inf = Tensor::scalar(1e308);
  CHECK_THROWS_AS(mul(inf, Tensor::scalar(1e308)), NumericError);
  CHECK_THROWS_AS(add(inf, inf), NumericError);
}

TEST_CASE("mutable access is restricted to leaves") {
  Tensor x = Tensor::scalar(1.0, true);
  Tensor y = add(x, x);
  CHECK_NOTHROW(x.mutable_value());
  CHECK_THROWS(y.mutable_value());
  CHECK(sum_value(y) == 2.0);
}
