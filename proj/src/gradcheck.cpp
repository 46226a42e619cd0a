#include "latentfoil/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "latentfoil/errors.hpp"

namespace latentfoil::gradcheck {

using ad::Shape;
using ad::Tensor;
using ad::Var;

double relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  if (analytic.size() != numeric.size()) throw InvalidArgument("relative_error: size mismatch");
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max(scale, std::abs(numeric[i]));
  }
  return diff / std::max(scale, floor);
}

double componentwise_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                    double threshold) {
  if (analytic.size() != numeric.size()) throw InvalidArgument("componentwise_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (std::abs(analytic[i]) <= threshold) continue;
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / std::abs(numeric[i]));
  }
  return worst;
}

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double h) {
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

namespace {

double contract(const Builder& build, const std::vector<Tensor>& inputs, const Tensor& seed) {
  ad::Tape tape;
  std::vector<Var> leaves;
  for (const auto& in : inputs) leaves.push_back(tape.constant(in));
  const Tensor& out = build(leaves).value();
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) acc += seed[i] * out[i];
  return acc;
}

}  // namespace

double check_builder(const Builder& build, const std::vector<Tensor>& inputs, std::uint64_t seed, double h) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;

  ad::Tape tape;
  std::vector<Var> leaves;
  for (const auto& in : inputs) leaves.push_back(tape.variable(in));
  const Var out = build(leaves);
  Tensor w(out.value().shape);
  for (auto& v : w.data) v = normal(rng);
  const auto grads = tape.backward(out, w);

  std::vector<double> analytic, numeric;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& g = grads[leaves[k]];
    analytic.insert(analytic.end(), g.data.begin(), g.data.end());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      probe[k][i] = inputs[k][i] + h;
      const double up = contract(build, probe, w);
      probe[k][i] = inputs[k][i] - h;
      const double down = contract(build, probe, w);
      probe[k][i] = inputs[k][i];
      numeric.push_back((up - down) / (2.0 * h));
    }
  }
  return relative_error(analytic, numeric);
}

namespace {

struct OpCase {
  std::string name;
  Builder build;
  std::function<std::vector<Tensor>(std::mt19937_64&)> inputs;
};

Tensor random_tensor(std::mt19937_64& rng, Shape s, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Magnitude in [lo, hi] with a random sign.
Tensor signed_tensor(std::mt19937_64& rng, Shape s, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::bernoulli_distribution coin;
  Tensor t(s);
  for (auto& v : t.data) v = coin(rng) ? u(rng) : -u(rng);
  return t;
}

std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Shape random_shape(std::mt19937_64& rng) {
  return std::bernoulli_distribution()(rng) ? Shape::vector(draw(rng, 2, 6))
                                             : Shape::matrix(draw(rng, 2, 4), draw(rng, 2, 4));
}

template <class F>
OpCase unary_case(std::string name, F f, double lo, double hi) {
  return {std::move(name), [f](std::span<const Var> v) { return f(v[0]); },
          [lo, hi](std::mt19937_64& rng) { return std::vector<Tensor>{random_tensor(rng, random_shape(rng), lo, hi)}; }};
}

template <class F>
OpCase binary_case(std::string name, F f, bool nonzero_second) {
  return {std::move(name), [f](std::span<const Var> v) { return f(v[0], v[1]); },
          [nonzero_second](std::mt19937_64& rng) {
            const Shape s = random_shape(rng);
            return std::vector<Tensor>{random_tensor(rng, s, -2, 2),
                                       nonzero_second ? signed_tensor(rng, s, 0.5, 2) : random_tensor(rng, s, -2, 2)};
          }};
}

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  cases.push_back(binary_case("add", [](Var a, Var b) { return add(a, b); }, false));
  cases.push_back(binary_case("sub", [](Var a, Var b) { return sub(a, b); }, false));
  cases.push_back(binary_case("mul", [](Var a, Var b) { return mul(a, b); }, false));
  cases.push_back(binary_case("div", [](Var a, Var b) { return div(a, b); }, true));
  cases.push_back(unary_case("scale", [](Var a) { return scale(a, -1.7); }, -2, 2));
  cases.push_back(unary_case("shift", [](Var a) { return shift(a, 0.3); }, -2, 2));
  cases.push_back(unary_case("sin", [](Var a) { return sin(a); }, -3, 3));
  cases.push_back(unary_case("cos", [](Var a) { return cos(a); }, -3, 3));
  cases.push_back(unary_case("exp", [](Var a) { return exp(a); }, -2, 2));
  cases.push_back(unary_case("log", [](Var a) { return log(a); }, 0.2, 3));
  cases.push_back(unary_case("power", [](Var a) { return power(a, 2.7); }, 0.2, 2));
  cases.push_back(unary_case("sqrt", [](Var a) { return sqrt(a); }, 0.2, 3));
  cases.push_back(unary_case("tanh", [](Var a) { return tanh(a); }, -2, 2));
  cases.push_back(unary_case("silu", [](Var a) { return silu(a); }, -4, 4));
  cases.push_back({"atan2", [](std::span<const Var> v) { return atan2(v[0], v[1]); }, [](std::mt19937_64& rng) {
                     // Keep clear of the branch cut on the negative x axis.
                     const Shape s = random_shape(rng);
                     return std::vector<Tensor>{signed_tensor(rng, s, 0.3, 2), random_tensor(rng, s, -2, 2)};
                   }});
  cases.push_back(unary_case("sum", [](Var a) { return sum(a); }, -2, 2));
  cases.push_back(unary_case("mean", [](Var a) { return mean(a); }, -2, 2));
  cases.push_back({"matvec", [](std::span<const Var> v) { return matvec(v[0], v[1]); }, [](std::mt19937_64& rng) {
                     const std::size_t r = draw(rng, 1, 5), c = draw(rng, 1, 5);
                     return std::vector<Tensor>{random_tensor(rng, Shape::matrix(r, c), -2, 2),
                                                random_tensor(rng, Shape::vector(c), -2, 2)};
                   }});
  cases.push_back({"matmul", [](std::span<const Var> v) { return matmul(v[0], v[1]); }, [](std::mt19937_64& rng) {
                     const std::size_t r = draw(rng, 1, 4), k = draw(rng, 1, 4), c = draw(rng, 1, 4);
                     return std::vector<Tensor>{random_tensor(rng, Shape::matrix(r, k), -2, 2),
                                                random_tensor(rng, Shape::matrix(k, c), -2, 2)};
                   }});
  cases.push_back({"conv1d", [](std::span<const Var> v) { return conv1d(v[0], v[1], v[2]); },
                   [](std::mt19937_64& rng) {
                     const std::size_t ci = draw(rng, 1, 3), co = draw(rng, 1, 3), len = draw(rng, 3, 8);
                     const std::size_t k = std::bernoulli_distribution()(rng) ? 3 : 1;
                     return std::vector<Tensor>{random_tensor(rng, Shape::matrix(ci, len), -2, 2),
                                                random_tensor(rng, Shape::matrix(co, ci * k), -1, 1),
                                                random_tensor(rng, Shape::vector(co), -1, 1)};
                   }});
  cases.push_back({"concat", [](std::span<const Var> v) { return concat(v[0], v[1], ad::Axis::rows); },
                   [](std::mt19937_64& rng) {
                     if (std::bernoulli_distribution()(rng)) {
                       return std::vector<Tensor>{random_tensor(rng, Shape::vector(draw(rng, 1, 5)), -2, 2),
                                                  random_tensor(rng, Shape::vector(draw(rng, 1, 5)), -2, 2)};
                     }
                     const std::size_t c = draw(rng, 1, 4);
                     return std::vector<Tensor>{random_tensor(rng, Shape::matrix(draw(rng, 1, 4), c), -2, 2),
                                                random_tensor(rng, Shape::matrix(draw(rng, 1, 4), c), -2, 2)};
                   }});
  cases.push_back({"concat_cols", [](std::span<const Var> v) { return concat(v[0], v[1], ad::Axis::cols); },
                   [](std::mt19937_64& rng) {
                     const std::size_t r = draw(rng, 1, 4);
                     return std::vector<Tensor>{random_tensor(rng, Shape::matrix(r, draw(rng, 1, 4)), -2, 2),
                                                random_tensor(rng, Shape::matrix(r, draw(rng, 1, 4)), -2, 2)};
                   }});
  cases.push_back({"slice", [](std::span<const Var> v) { return slice(v[0], 2, Shape::matrix(2, 2)); },
                   [](std::mt19937_64& rng) {
                     return std::vector<Tensor>{random_tensor(rng, Shape::vector(draw(rng, 6, 9)), -2, 2)};
                   }});
  cases.push_back({"gather", [](std::span<const Var> v) { return gather(v[0], {3, 0, 3, 1}); },
                   [](std::mt19937_64& rng) {
                     return std::vector<Tensor>{random_tensor(rng, Shape::vector(draw(rng, 4, 7)), -2, 2)};
                   }});
  cases.push_back({"broadcast_fill",
                   [](std::span<const Var> v) { return broadcast(v[0], Shape::matrix(2, 3), ad::Broadcast::fill); },
                   [](std::mt19937_64& rng) { return std::vector<Tensor>{random_tensor(rng, Shape::scalar(), -2, 2)}; }});
  cases.push_back({"broadcast_cols",
                   [](std::span<const Var> v) {
                     return broadcast(v[0], Shape::matrix(v[0].value().size(), 3), ad::Broadcast::repeat_cols);
                   },
                   [](std::mt19937_64& rng) {
                     return std::vector<Tensor>{random_tensor(rng, Shape::vector(draw(rng, 1, 5)), -2, 2)};
                   }});
  cases.push_back({"broadcast_rows",
                   [](std::span<const Var> v) {
                     return broadcast(v[0], Shape::matrix(4, v[0].value().size()), ad::Broadcast::repeat_rows);
                   },
                   [](std::mt19937_64& rng) {
                     return std::vector<Tensor>{random_tensor(rng, Shape::vector(draw(rng, 1, 5)), -2, 2)};
                   }});
  cases.push_back({"reshape",
                   [](std::span<const Var> v) { return reshape(v[0], Shape::matrix(2, v[0].value().size() / 2)); },
                   [](std::mt19937_64& rng) {
                     return std::vector<Tensor>{random_tensor(rng, Shape::vector(2 * draw(rng, 1, 4)), -2, 2)};
                   }});
  return cases;
}

}  // namespace

std::vector<Row> autodiff_ops(std::size_t trials, std::uint64_t seed, double tolerance) {
  std::vector<Row> rows;
  std::mt19937_64 rng(seed);
  for (const auto& c : op_cases()) {
    Row row{c.name, 0.0, tolerance, trials};
    for (std::size_t t = 0; t < trials; ++t) {
      const auto inputs = c.inputs(rng);
      row.max_rel_error = std::max(row.max_rel_error, check_builder(c.build, inputs, rng()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace latentfoil::gradcheck
