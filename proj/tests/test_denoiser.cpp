#include <chrono>
#include <cmath>
#include <random>

#include <doctest.h>

#include "latentfoil/denoiser.hpp"
#include "latentfoil/errors.hpp"
#include "latentfoil/gradcheck.hpp"

using namespace latentfoil;
using nn::Denoiser;
using nn::DenoiserConfig;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.d = 8;
  c.channels = 4;
  c.depth = 2;
  c.time_embed_dim = 8;
  c.num_timesteps = 10;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("parameter count follows the layer layout") {
  auto count = [](std::size_t c, std::size_t e, std::size_t depth) {
    const std::size_t res = 6 * c * c + e * c + 3 * c;
    const std::size_t res_skip = 11 * c * c + e * c + 4 * c;
    return 2 * (e * e + e) + 4 * c + depth * 2 * res + res + depth * (res_skip + res) + 3 * c + 1;
  };
  CHECK(nn::parameter_count(DenoiserConfig{}) == count(32, 64, 2));
  CHECK(nn::parameter_count(DenoiserConfig{}) == 93441);
  CHECK(nn::parameter_count(small_config()) == count(4, 8, 2));
  const auto layout = nn::parameter_layout(DenoiserConfig{});
  std::size_t offset = 0;
  for (const auto& b : layout) {
    CHECK(b.offset == offset);
    offset += b.size();
  }
}

TEST_CASE("initialization is seeded and bounded") {
  DenoiserConfig c;
  const auto a = Denoiser::init(c);
  const auto b = Denoiser::init(c);
  c.seed = 1;
  const auto other = Denoiser::init(c);
  CHECK(std::vector<double>(a.parameters().begin(), a.parameters().end()) ==
        std::vector<double>(b.parameters().begin(), b.parameters().end()));
  CHECK(std::vector<double>(a.parameters().begin(), a.parameters().end()) !=
        std::vector<double>(other.parameters().begin(), other.parameters().end()));
  for (const auto& blk : a.layout()) {
    const auto v = a.block(blk.name);
    const double bound = 1.0 / std::sqrt(static_cast<double>(blk.fan_in));
    for (double x : v) {
      if (blk.cols == 0) {
        CHECK(x == 0.0);
      } else {
        CHECK(std::abs(x) <= bound);
      }
    }
  }
}

TEST_CASE("config validation") {
  DenoiserConfig c;
  c.d = 42;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c.d = 40;
  c.time_embed_dim = 7;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  CHECK_THROWS_AS(Denoiser(DenoiserConfig{}, std::vector<double>(10)), InvalidArgument);
}

TEST_CASE("output shape, range checks, zeroed output layer, determinism") {
  auto model = Denoiser::init(DenoiserConfig{});
  const auto x = random_vector(40, 1);
  for (int t : {1, 500, 1000}) CHECK(model(x, t).size() == 40);
  CHECK_THROWS_AS(model(x, 0), InvalidArgument);
  CHECK_THROWS_AS(model(x, 1001), InvalidArgument);
  CHECK_THROWS_AS(model(random_vector(39, 1), 3), InvalidArgument);
  CHECK(model(x, 17) == model(x, 17));

  for (auto& w : model.block("out.w")) w = 0.0;
  for (auto& b : model.block("out.b")) b = 0.0;
  for (double v : model(x, 250)) CHECK(v == 0.0);
}

TEST_CASE("gradient of the summed output with respect to the input") {
  const auto model = Denoiser::init(DenoiserConfig{});
  const auto x = random_vector(40, 4);
  ad::Tape tape;
  auto xv = tape.variable(ad::Tensor::vector(x));
  const auto g = tape.backward(sum(model.forward(xv, 123, false)))[xv].data;
  const auto fd = gradcheck::central_difference(
      [&](std::span<const double> p) {
        double s = 0.0;
        for (double v : model(p, 123)) s += v;
        return s;
      },
      x);
  CHECK(gradcheck::relative_error(g, fd) < 1e-5);
}

TEST_CASE("vector-Jacobian products to input and parameters, random probes") {
  auto model = Denoiser::init(small_config());
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<std::size_t> pick(0, model.parameters().size() - 1);
  for (int probe = 0; probe < 20; ++probe) {
    const auto x = random_vector(8, 100 + probe);
    const auto w = random_vector(8, 200 + probe);
    const int t = 1 + probe % 10;
    ad::Tape tape;
    auto xv = tape.variable(ad::Tensor::vector(x));
    auto out = model.forward(xv, t, true);
    const auto grads = tape.backward(out, ad::Tensor::vector(w));
    const auto gx = grads[xv].data;
    const auto gtheta = model.parameter_gradient(tape, grads);

    auto contract = [&](const Denoiser& m, std::span<const double> xin) {
      const auto y = m(xin, t);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
      return s;
    };
    const auto fdx = gradcheck::central_difference([&](std::span<const double> p) { return contract(model, p); }, x);
    CHECK(gradcheck::relative_error(gx, fdx) < 1e-5);

    // Directional derivative along a random parameter direction, plus one coordinate.
    std::vector<double> dir(model.parameters().size());
    for (auto& v : dir) v = normal(rng);
    double analytic = 0.0;
    for (std::size_t i = 0; i < dir.size(); ++i) analytic += gtheta[i] * dir[i];
    const std::vector<double> base(model.parameters().begin(), model.parameters().end());
    auto along = [&](double s) {
      auto m = model;
      for (std::size_t i = 0; i < dir.size(); ++i) m.parameters()[i] = base[i] + s * dir[i];
      return contract(m, x);
    };
    const double h = 1e-6;
    const double numeric = (along(h) - along(-h)) / (2 * h);
    CHECK(std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-8) < 1e-5);

    const std::size_t k = pick(rng);
    auto coord = [&](double s) {
      auto m = model;
      m.parameters()[k] = base[k] + s;
      return contract(m, x);
    };
    const double nk = (coord(h) - coord(-h)) / (2 * h);
    CHECK(std::abs(gtheta[k] - nk) <= 1e-5 * std::max(std::abs(nk), 1e-3));
  }
}

TEST_CASE("forward plus backward cost of the default network") {
  const auto model = Denoiser::init(DenoiserConfig{});
  const auto x = random_vector(40, 9);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 20; ++i) {
    ad::Tape tape;
    auto xv = tape.constant(ad::Tensor::vector(x));
    auto y = model.forward(xv, 10 + i, true);
    (void)model.parameter_gradient(tape, tape.backward(sum(y)));
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count() / 20;
  MESSAGE("forward + backward: " << ms << " ms");
  CHECK(ms < 100.0);
}
