#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"

#include "dct/autograd.hpp"
#include "dct/ops.hpp"

using namespace dct;

TEST_SUITE("numeric-core") {

TEST_CASE("tensor rejects bad shapes and non-finite data") {
  CHECK_THROWS_AS(Tensor(Shape{}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2}, std::vector<float>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{1}, std::vector<float>{NAN}), NumericError);
  CHECK_THROWS_AS(Tensor(Shape{2, 3}).reshaped(Shape{4}), ShapeError);
  Tensor t(Shape{2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.at(1, 2) == 6.0f);
  CHECK(t.reshaped(Shape{3, 2}).at(2, 0) == 5.0f);
}

TEST_CASE("matmul: identity and hand example") {
  Graph<double> g;
  auto eye = g.constant(TensorD(Shape{2, 2}, std::vector<double>{1, 0, 0, 1}));
  auto m = g.constant(TensorD(Shape{2, 2}, std::vector<double>{0.5, -2, 7, 3}));
  CHECK(matmul(eye, m).value() == m.value());

  auto a = g.constant(TensorD(Shape{2, 2}, std::vector<double>{1, 2, 3, 4}));
  auto b = g.constant(TensorD(Shape{2, 1}, std::vector<double>{1, 1}));
  auto c = matmul(a, b).value();
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c[0] == 3.0);
  CHECK(c[1] == 7.0);
}

TEST_CASE("matmul matches a triple loop") {
  const Tensor a = testing::random_tensor(Shape{5, 4}, 1);
  const Tensor b = testing::random_tensor(Shape{4, 3}, 2);
  Graph<float> g;
  const Tensor c = matmul(g.constant(a), g.constant(b)).value();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double ref = 0.0;
      for (std::size_t k = 0; k < 4; ++k) ref += static_cast<double>(a.at(i, k)) * b.at(k, j);
      CHECK(std::abs(c.at(i, j) - ref) < 1e-6);
    }
}

TEST_CASE("batched matmul and mismatched shapes") {
  const Tensor a = testing::random_tensor(Shape{2, 3, 4}, 3);
  const Tensor b = testing::random_tensor(Shape{2, 4, 2}, 4);
  Graph<float> g;
  const Tensor c = matmul(g.constant(a), g.constant(b)).value();
  CHECK(c.shape() == Shape{2, 3, 2});
  double ref = 0.0;
  for (std::size_t k = 0; k < 4; ++k) ref += static_cast<double>(a[12 + 8 + k]) * b[8 + k * 2 + 1];
  CHECK(std::abs(c[6 + 5] - ref) < 1e-6);
  CHECK_THROWS_AS(matmul(g.constant(a), g.constant(Tensor(Shape{3, 2}))), ShapeError);
}

TEST_CASE("softmax rows") {
  Graph<double> g;
  auto half = softmax_rows(g.constant(TensorD(Shape{1, 2}, std::vector<double>{0, 0}))).value();
  CHECK(half[0] == 0.5);
  CHECK(half[1] == 0.5);

  auto big = softmax_rows(g.constant(TensorD(Shape{1, 2}, std::vector<double>{1000, 0}))).value();
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] == doctest::Approx(0.0));

  Graph<float> gf;
  auto s = softmax_rows(gf.constant(Tensor(Shape{1, 3}, std::vector<float>{1, 2, 3}))).value();
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(s[j] - std::exp(j + 1.0) / z) < 1e-6);
}

TEST_CASE("softmax with a masked last column gives it exactly zero") {
  Graph<double> g;
  auto s = softmax_rows(g.constant(TensorD(Shape{2, 3}, std::vector<double>{1, 2, 50, 0, 0, 0})), true).value();
  CHECK(s.at(0, 2) == 0.0);
  CHECK(s.at(1, 2) == 0.0);
  CHECK(s.at(1, 0) == 0.5);
  CHECK(s.at(0, 0) + s.at(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("layer norm") {
  Graph<double> g;
  auto ones = g.constant(TensorD(Shape{4}, 1.0));
  auto zeros = g.constant(TensorD(Shape{4}, 0.0));
  auto flat = layer_norm(g.constant(TensorD(Shape{1, 4}, 3.0)), ones, zeros).value();
  for (double v : flat.data()) CHECK(v == 0.0);

  auto b = g.constant(TensorD(Shape{4}, std::vector<double>{1, -2, 3, 0.5}));
  auto x = g.constant(testing::random_tensor<double>(Shape{2, 4}, 5));
  auto killed = layer_norm(x, zeros, b).value();
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 4; ++j) CHECK(killed.at(r, j) == b.value()[j]);
}

TEST_CASE("layer norm matches a 64-bit mean/variance oracle") {
  const Tensor x = testing::random_tensor(Shape{3, 8}, 6, 2.0);
  const Tensor gamma = testing::random_tensor(Shape{8}, 7);
  const Tensor beta = testing::random_tensor(Shape{8}, 8);
  Graph<float> g;
  const Tensor y = layer_norm(g.constant(x), g.constant(gamma), g.constant(beta)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 8; ++j) mu += x.at(r, j);
    mu /= 8;
    for (std::size_t j = 0; j < 8; ++j) var += (x.at(r, j) - mu) * (x.at(r, j) - mu);
    var /= 8;
    for (std::size_t j = 0; j < 8; ++j) {
      const double ref = (x.at(r, j) - mu) / std::sqrt(var + kLayerNormEps) * gamma[j] + beta[j];
      CHECK(std::abs(y.at(r, j) - ref) < 1e-5);
    }
  }
}

TEST_CASE("gelu values, asymptotes and derivative") {
  Graph<double> g;
  auto y = gelu(g.constant(TensorD(Shape{3}, std::vector<double>{0, 30, -30}))).value();
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(30.0));
  CHECK(std::abs(y[2]) < 1e-12);

  Graph<float> gf;
  auto x = gf.leaf(Tensor(Shape{1}, 0.5f), "x", true);
  auto grads = gf.backward(sum(gelu(x)));
  auto f = [](double v) { return 0.5 * v * (1 + std::tanh(std::sqrt(2 / M_PI) * (v + 0.044715 * v * v * v))); };
  const double h = 1e-4;
  const double fd = (f(0.5 + h) - f(0.5 - h)) / (2 * h);
  CHECK(std::abs(grads.at("x")[0] - fd) < 1e-4);
}

TEST_CASE("log of a non-positive value is a numeric error") {
  Graph<double> g;
  CHECK_THROWS_AS(log(g.constant(TensorD(Shape{2}, std::vector<double>{1.0, 0.0}))), NumericError);
}

TEST_CASE("broadcast add and shape errors") {
  Graph<double> g;
  auto a = g.constant(TensorD(Shape{2, 3}, 1.0));
  auto b = g.constant(TensorD(Shape{3}, std::vector<double>{1, 2, 3}));
  auto c = add(a, b).value();
  CHECK(c.at(1, 2) == 4.0);
  CHECK_THROWS_AS(add(a, g.constant(TensorD(Shape{2}, 1.0))), ShapeError);
}

TEST_CASE("log_softmax agrees with log of softmax") {
  const Tensor x = testing::random_tensor(Shape{4, 6}, 9, 3.0);
  Graph<double> g;
  auto xv = g.constant(x.cast<double>());
  auto a = log_softmax_rows(xv).value();
  auto b = log(softmax_rows(xv)).value();
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("head split and merge round-trip") {
  const Tensor x = testing::random_tensor(Shape{2, 5, 8}, 10);
  Graph<float> g;
  auto split = split_heads(g.constant(x), 4);
  CHECK(split.shape() == Shape{2, 4, 5, 2});
  CHECK(split.value()[(1 * 4 + 3) * 10 + 2 * 2 + 1] == x[1 * 40 + 2 * 8 + 3 * 2 + 1]);
  CHECK(merge_heads(split).value() == x);
  CHECK_THROWS_AS(split_heads(g.constant(x), 3), ShapeError);
}

}
