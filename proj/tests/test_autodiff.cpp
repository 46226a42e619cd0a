#include <cmath>
#include <numbers>
#include <random>

#include <doctest.h>

#include "latentfoil/autodiff.hpp"
#include "latentfoil/errors.hpp"
#include "latentfoil/gradcheck.hpp"

using namespace latentfoil;
using ad::Shape;
using ad::Tensor;

TEST_CASE("mul forward and product-rule adjoints") {
  ad::Tape tape;
  auto x = tape.variable(Tensor::scalar(3.0));
  auto y = tape.variable(Tensor::scalar(4.0));
  auto z = x * y;
  CHECK(z.item() == 12.0);
  auto g = tape.backward(z);
  CHECK(g[x][0] == 4.0);
  CHECK(g[y][0] == 3.0);
}

TEST_CASE("conv1d with width 3 keeps length 8") {
  ad::Tape tape;
  auto in = tape.variable(Tensor(Shape::matrix(2, 8), 1.0));
  auto w = tape.variable(Tensor(Shape::matrix(4, 6), 0.1));
  auto b = tape.variable(Tensor(Shape::vector(4), 0.0));
  auto out = conv1d(in, w, b);
  CHECK(out.shape() == Shape::matrix(4, 8));
  // Interior sees all three taps of both channels, the edges only two.
  CHECK(out.value().at(0, 3) == doctest::Approx(0.6));
  CHECK(out.value().at(0, 0) == doctest::Approx(0.4));
}

TEST_CASE("square has gradient 6 at 3") {
  ad::Tape tape;
  auto x = tape.variable(Tensor::scalar(3.0));
  auto g = tape.backward(x * x);
  CHECK(g[x][0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("bump-shaped composite matches central differences") {
  const double e = std::log(0.5) / std::log(0.3);
  auto f = [e](double x) { return std::pow(std::sin(std::numbers::pi * std::pow(x, e)), 3); };
  for (double x0 : {0.1, 0.45, 0.7, 0.9}) {
    ad::Tape tape;
    auto x = tape.variable(Tensor::scalar(x0));
    auto y = power(sin(std::numbers::pi * power(x, e)), 3.0);
    CHECK(y.item() == doctest::Approx(f(x0)).epsilon(1e-14));
    const double g = tape.backward(y)[x][0];
    const double h = 1e-6;
    const double fd = (f(x0 + h) - f(x0 - h)) / (2 * h);
    CHECK(std::abs(g - fd) / std::abs(fd) < 1e-6);
  }
}

TEST_CASE("vector-Jacobian product of a matrix-vector map is the transpose product") {
  ad::Tape tape;
  auto a = tape.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  auto x = tape.variable(Tensor::vector({0.5, -1, 2}));
  auto y = matvec(a, x);
  auto g = tape.backward(y, Tensor::vector({1.0, -2.0}));
  CHECK(g[x][0] == -7.0);
  CHECK(g[x][1] == -8.0);
  CHECK(g[x][2] == -9.0);
}

TEST_CASE("every op passes the finite-difference check") {
  for (const auto& row : gradcheck::autodiff_ops(100, 7)) {
    INFO(row.name << " max rel error " << row.max_rel_error);
    CHECK(row.pass());
  }
}

TEST_CASE("adjoint is linear in the seed") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  ad::Tape tape;
  Tensor xv(Shape::vector(5));
  for (auto& v : xv.data) v = n(rng);
  auto x = tape.variable(xv);
  auto m = tape.constant(Tensor::matrix(3, 5, std::vector<double>(15, 0.3)));
  auto y = tanh(matvec(m, sin(x) * x));
  Tensor v1(Shape::vector(3)), v2(Shape::vector(3)), mix(Shape::vector(3));
  for (std::size_t i = 0; i < 3; ++i) {
    v1[i] = n(rng);
    v2[i] = n(rng);
    mix[i] = 2.5 * v1[i] - 0.75 * v2[i];
  }
  const auto g1 = tape.backward(y, v1)[x];
  const auto g2 = tape.backward(y, v2)[x];
  const auto gm = tape.backward(y, mix)[x];
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(gm[i] - (2.5 * g1[i] - 0.75 * g2[i])) < 1e-10);
}

TEST_CASE("identical tapes give bitwise identical gradients and backward leaves the tape intact") {
  auto run = [](ad::Tape& tape) {
    auto x = tape.variable(Tensor::vector({0.1, 0.7, -0.4}));
    auto y = sum(exp(x) * silu(x) / (2.0 + cos(x)));
    return std::pair(x, y);
  };
  ad::Tape t1, t2;
  auto [x1, y1] = run(t1);
  auto [x2, y2] = run(t2);
  const auto size_before = t1.size();
  const auto a = t1.backward(y1)[x1];
  const auto b = t2.backward(y2)[x2];
  const auto again = t1.backward(y1)[x1];
  CHECK(t1.size() == size_before);
  CHECK(a.data == b.data);
  CHECK(a.data == again.data);
}

TEST_CASE("shape mismatches and foreign outputs are rejected") {
  ad::Tape tape, other;
  auto a = tape.variable(Tensor::vector({1, 2}));
  auto b = tape.variable(Tensor::vector({1, 2, 3}));
  CHECK_THROWS_AS(add(a, b), InvalidArgument);
  CHECK_THROWS_AS(matvec(tape.constant(Tensor(Shape::matrix(2, 2))), b), InvalidArgument);
  auto c = other.variable(Tensor::scalar(1.0));
  CHECK_THROWS_AS(tape.backward(c), InvalidArgument);
  CHECK_THROWS_AS(tape.backward(a), InvalidArgument);
  CHECK_THROWS_AS(add(a, other.variable(Tensor::vector({1, 2}))), InvalidArgument);
}

TEST_CASE("interned parameters bind once per tape") {
  ad::Tape tape;
  const int key = 0;
  auto p1 = tape.intern(&key, Tensor::vector({1, 2}), true);
  auto p2 = tape.intern(&key, Tensor::vector({5, 5}), true);
  CHECK(p1.id() == p2.id());
  auto g = tape.backward(sum(p1 * p2));
  CHECK(g[p1][0] == 2.0);
  CHECK(g[p1][1] == 4.0);
}

TEST_CASE("nodes without a path from the output get zero adjoints") {
  ad::Tape tape;
  auto x = tape.variable(Tensor::scalar(2.0));
  auto unused = tape.variable(Tensor::vector({1, 2, 3}));
  auto y = x * x;
  auto g = tape.backward(y);
  CHECK(g[unused].data == std::vector<double>{0, 0, 0});
}
