#include <cmath>
#include <random>
#include <sstream>

#include <doctest.h>

#include "latentfoil/diffusion.hpp"
#include "latentfoil/errors.hpp"
#include "latentfoil/gradcheck.hpp"

using namespace latentfoil;
using namespace latentfoil::diffusion;
using ad::Tensor;
using ad::Var;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

nn::DenoiserConfig small_config(int T) {
  nn::DenoiserConfig c;
  c.d = 8;
  c.channels = 4;
  c.time_embed_dim = 8;
  c.num_timesteps = T;
  c.seed = 5;
  return c;
}

nn::Denoiser default_model(std::uint64_t seed = 0) {
  nn::DenoiserConfig c;
  c.seed = seed;
  return nn::Denoiser::init(c);
}

}  // namespace

TEST_CASE("linear schedule values") {
  const auto one = linear_schedule(1, 0.25, 0.5);
  CHECK(one.beta == std::vector<double>{0.25});

  const auto two = linear_schedule(2, 0.1, 0.3);
  CHECK(two.alpha_bar[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(two.alpha_bar[1] == doctest::Approx(0.63).epsilon(1e-15));
  CHECK(two.alpha_bar_at(0) == 1.0);

  // Product of (1 - beta) for the default schedule, 40-digit arithmetic.
  const auto s = linear_schedule();
  CHECK(s.T == 1000);
  CHECK(s.beta.front() == 1e-4);
  CHECK(s.beta.back() == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(s.alpha_bar.back() < 1e-4);
  CHECK(s.alpha_bar.back() == doctest::Approx(4.035829765375683e-05).epsilon(1e-12));

  CHECK_THROWS_AS(linear_schedule(0), InvalidArgument);
  CHECK_THROWS_AS(linear_schedule(10, 0.0, 0.1), InvalidArgument);
  CHECK_THROWS_AS(linear_schedule(10, 0.2, 0.1), InvalidArgument);
  CHECK_THROWS_AS(linear_schedule(10, 0.1, 1.0), InvalidArgument);
  CHECK_THROWS_AS(s.beta_at(0), InvalidArgument);
  CHECK_THROWS_AS(s.alpha_bar_at(1001), InvalidArgument);
}

TEST_CASE("schedule invariants") {
  for (const auto& s : {linear_schedule(), linear_schedule(10), linear_schedule(57, 1e-3, 0.3)}) {
    for (int t = 1; t <= s.T; ++t) {
      CHECK(s.beta_at(t) > 0.0);
      CHECK(s.beta_at(t) < 1.0);
      CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
      CHECK(std::abs(s.alpha_bar_at(t) - s.alpha_bar_at(t - 1) * s.alpha_at(t)) <= 1e-14);
    }
  }
}

TEST_CASE("forward diffusion") {
  const auto s = linear_schedule();
  const auto x0 = random_vector(40, 1);
  const std::vector<double> zero(40, 0.0);
  for (int t : {1, 300, 1000}) {
    const auto xt = forward_diffuse(x0, t, zero, s);
    for (std::size_t i = 0; i < 40; ++i) CHECK(xt[i] == std::sqrt(s.alpha_bar_at(t)) * x0[i]);
  }
  const auto eps = random_vector(40, 2);
  const auto late = forward_diffuse(x0, 1000, eps, s);
  for (std::size_t i = 0; i < 40; ++i) CHECK(std::abs(late[i] - eps[i]) < 0.02);

  CHECK_THROWS_AS(forward_diffuse(x0, 0, eps, s), InvalidArgument);
  CHECK_THROWS_AS(forward_diffuse(x0, 1001, eps, s), InvalidArgument);
  CHECK_THROWS_AS(forward_diffuse(x0, 5, std::vector<double>(39), s), InvalidArgument);
}

TEST_CASE("forward marginal moments over 1e5 draws") {
  const auto s = linear_schedule();
  const std::vector<double> x0{0.7, -0.2, 0.1, 1.3};
  const int t = 250;
  const double ab = s.alpha_bar_at(t);
  const std::size_t n = 100000;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  std::vector<double> sum(4, 0.0), sq(4, 0.0);
  std::vector<double> eps(4);
  for (std::size_t k = 0; k < n; ++k) {
    for (auto& e : eps) e = normal(rng);
    const auto xt = forward_diffuse(x0, t, eps, s);
    for (std::size_t i = 0; i < 4; ++i) {
      sum[i] += xt[i];
      sq[i] += xt[i] * xt[i];
    }
  }
  const double var = 1.0 - ab;
  for (std::size_t i = 0; i < 4; ++i) {
    const double mean = sum[i] / n;
    const double sample_var = (sq[i] - n * mean * mean) / (n - 1);
    CHECK(std::abs(mean - std::sqrt(ab) * x0[i]) < 3.0 * std::sqrt(var / n));
    CHECK(std::abs(sample_var - var) < 3.0 * var * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("strided step lists") {
  CHECK(strided_steps(1000, 50).front() == 1000);
  CHECK(strided_steps(1000, 50).back() == 20);
  CHECK(strided_steps(1000, 10) == std::vector<int>{1000, 900, 800, 700, 600, 500, 400, 300, 200, 100});
  CHECK(strided_steps(5, 50) == std::vector<int>{5, 4, 3, 2, 1});
  CHECK_NOTHROW(validate_steps(strided_steps(1000, 37), 1000));
  CHECK_THROWS_AS(validate_steps(std::vector<int>{10, 10, 3}, 10), InvalidArgument);
  CHECK_THROWS_AS(validate_steps(std::vector<int>{11, 3}, 10), InvalidArgument);
  CHECK_THROWS_AS(validate_steps(std::vector<int>{3, 0}, 10), InvalidArgument);
}

TEST_CASE("training loss with a zeroed output layer is the noise norm") {
  const auto s = linear_schedule();
  auto model = default_model();
  for (auto& w : model.block("out.w")) w = 0.0;
  std::vector<std::vector<double>> batch(64, random_vector(40, 3));
  std::mt19937_64 rng(4);
  auto replay = rng;
  ad::Tape tape;
  const double loss = training_loss(model, batch, rng, s, tape).item();

  std::uniform_int_distribution<int> pick_t(1, s.T);
  std::normal_distribution<double> normal;
  double expected = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    (void)pick_t(replay);
    for (int i = 0; i < 40; ++i) {
      const double e = normal(replay);
      expected += e * e;
    }
  }
  expected /= batch.size();
  CHECK(loss == doctest::Approx(expected).epsilon(1e-14));
  // chi-square with 40 degrees of freedom, batch mean of 64
  CHECK(std::abs(loss - 40.0) < 3.0 * std::sqrt(80.0 / 64.0));
}

TEST_CASE("training loss with a perfect noise oracle vanishes") {
  const auto s = linear_schedule();
  const auto x0 = random_vector(40, 5);
  std::vector<std::vector<double>> batch(8, x0);
  std::mt19937_64 rng(6);
  ad::Tape tape;
  const Var x0v = tape.constant(Tensor::vector(x0));
  const Predict oracle = [&](Var x_t, int t) {
    const double ab = s.alpha_bar_at(t);
    return (1.0 / std::sqrt(1.0 - ab)) * (x_t - std::sqrt(ab) * x0v);
  };
  CHECK(training_loss(oracle, batch, rng, s, tape).item() < 1e-20);
  CHECK_THROWS_AS(training_loss(oracle, std::span<const std::vector<double>>{}, rng, s, tape), InvalidArgument);
}

TEST_CASE("training loss gradient on a parameter slice") {
  const auto s = linear_schedule(10);
  const auto model = nn::Denoiser::init(small_config(10));
  std::vector<std::vector<double>> batch{random_vector(8, 7), random_vector(8, 8), random_vector(8, 9)};
  const std::mt19937_64 rng0(10);
  ad::Tape tape;
  auto rng = rng0;
  const Var loss = training_loss(model, batch, rng, s, tape);
  const auto g = model.parameter_gradient(tape, tape.backward(loss));

  // Ten parameters spread over the layout, starting inside the first conv.
  const std::size_t first = model.layout()[4].offset;
  const std::size_t stride = (model.parameters().size() - first) / 10;
  std::vector<std::size_t> slice;
  for (std::size_t k = 0; k < 10; ++k) slice.push_back(first + k * stride);
  std::vector<double> x(10), analytic(10);
  for (std::size_t k = 0; k < 10; ++k) {
    x[k] = model.parameters()[slice[k]];
    analytic[k] = g[slice[k]];
  }
  const auto fd = gradcheck::central_difference(
      [&](std::span<const double> p) {
        auto m = model;
        for (std::size_t k = 0; k < 10; ++k) m.parameters()[slice[k]] = p[k];
        auto r = rng0;
        ad::Tape t;
        return training_loss(m, batch, r, s, t).item();
      },
      x);
  CHECK(gradcheck::relative_error(analytic, fd) < 1e-4);
}

TEST_CASE("predicted x0") {
  const auto s = linear_schedule();
  const auto x0 = random_vector(6, 12);
  const auto eps = random_vector(6, 13);
  for (int t : {1, 40, 999}) {
    const auto xt = forward_diffuse(x0, t, eps, s);
    ad::Tape tape;
    const Var xv = tape.constant(Tensor::vector(xt));
    const auto plain = predicted_x0(ZeroPredictor(6), xv, t, s).value().data;
    for (std::size_t i = 0; i < 6; ++i) CHECK(plain[i] == doctest::Approx(xt[i] / std::sqrt(s.alpha_bar_at(t))));

    const LinearPredictor inject(Tensor(ad::Shape::matrix(6, 6), 0.0), eps);
    const auto rec = predicted_x0(inject, xv, t, s).value().data;
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(rec[i] - x0[i]) < 1e-12 * std::max(1.0, std::abs(x0[i])));
  }

  const auto model = default_model(2);
  const auto x = random_vector(40, 14);
  const auto w = random_vector(40, 15);
  ad::Tape tape;
  const Var xv = tape.variable(Tensor::vector(x));
  const auto g = tape.backward(predicted_x0(model, xv, 37, s), Tensor::vector(w))[xv].data;
  const auto fd = gradcheck::central_difference(
      [&](std::span<const double> p) {
        ad::Tape t;
        return dot(w, predicted_x0(model, t.constant(Tensor::vector({p.begin(), p.end()})), 37, s).value().data);
      },
      x);
  CHECK(gradcheck::relative_error(g, fd) < 1e-5);
}

TEST_CASE("ddim step special cases") {
  const auto s = linear_schedule();
  const auto model = default_model(3);
  const auto x = random_vector(40, 16);
  ad::Tape tape;
  const Var xv = tape.constant(Tensor::vector(x));
  const auto last = ddim_step(model, xv, 1, s).value().data;
  CHECK(last == predicted_x0(model, xv, 1, s).value().data);
  const auto jump = ddim_step(model, xv, 500, s, 0).value().data;
  CHECK(jump == predicted_x0(model, xv, 500, s).value().data);

  const ZeroPredictor zero(40);
  for (int t : {2, 100, 1000}) {
    const auto y = ddim_step(zero, xv, t, s).value().data;
    const double ratio = std::sqrt(s.alpha_bar_at(t - 1)) / std::sqrt(s.alpha_bar_at(t));
    for (std::size_t i = 0; i < 40; ++i) CHECK(y[i] == doctest::Approx(ratio * x[i]).epsilon(1e-14));
  }
  CHECK_THROWS_AS(ddim_step(zero, xv, 5, s, 5), InvalidArgument);
}

TEST_CASE("generate is the fold of ddim steps and is deterministic") {
  const auto s = linear_schedule();
  const auto model = default_model(4);
  const auto z = random_vector(40, 17);
  const auto steps = strided_steps(1000, 10);
  const auto x = generate(model, z, s, steps);
  CHECK(x == generate(model, z, s, steps));

  ad::Tape tape;
  Var v = tape.constant(Tensor::vector(z));
  for (std::size_t k = 0; k < steps.size(); ++k) v = ddim_step(model, v, steps[k], s, k + 1 < steps.size() ? steps[k + 1] : 0);
  for (std::size_t i = 0; i < 40; ++i) CHECK(std::abs(v.value()[i] - x[i]) <= 1e-14 * std::max(1.0, std::abs(x[i])));

  // Full chain on a short schedule.
  const auto s10 = linear_schedule(10);
  auto c = small_config(10);
  c.d = 40;
  const auto m10 = nn::Denoiser::init(c);
  const auto full = generate(m10, z, s10, {});
  const std::vector<int> all{10, 9, 8, 7, 6, 5, 4, 3, 2, 1};
  CHECK(full == generate(m10, z, s10, all));

  CHECK_THROWS_AS(generate(model, z, s, std::vector<int>{5, 7}), InvalidArgument);
  CHECK_THROWS_AS(generate(model, random_vector(39, 1), s, steps), InvalidArgument);
}

TEST_CASE("small latent perturbations move the output by the Jacobian") {
  const auto s = linear_schedule();
  const auto model = default_model(5);
  const auto z = random_vector(40, 18);
  const auto steps = strided_steps(1000, 10);
  auto dz = random_vector(40, 19);
  const double norm = std::sqrt(dot(dz, dz));
  for (auto& v : dz) v *= 1e-8 / norm;
  std::vector<double> z2(z);
  for (std::size_t i = 0; i < 40; ++i) z2[i] += dz[i];
  const auto a = generate(model, z, s, steps);
  const auto b = generate(model, z2, s, steps);

  // Rows of the Jacobian from unit cotangents.
  std::vector<double> predicted(40), diff(40);
  for (std::size_t i = 0; i < 40; ++i) {
    std::vector<double> e(40, 0.0);
    e[i] = 1.0;
    predicted[i] = dot(backprop_through_sampler(model, z, s, steps, e), dz);
    diff[i] = b[i] - a[i];
  }
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(std::isfinite(diff[i]));
    err = std::max(err, std::abs(diff[i] - predicted[i]));
    scale = std::max(scale, std::abs(predicted[i]));
  }
  CHECK(scale > 1e-10);
  CHECK(scale < 1e-6);
  CHECK(err < 1e-4 * scale);
}

TEST_CASE("sampler backpropagation") {
  SUBCASE("near-identity chain") {
    const auto s = linear_schedule(1, 1e-12, 1e-12);
    const auto z = random_vector(40, 20);
    const auto xbar = random_vector(40, 21);
    const auto zbar = backprop_through_sampler(ZeroPredictor(40), z, s, {}, xbar);
    for (std::size_t i = 0; i < 40; ++i) CHECK(std::abs(zbar[i] - xbar[i]) < 1e-6);
  }
  SUBCASE("finite differences over all components at 10 steps") {
    const auto s = linear_schedule();
    const auto model = default_model(6);
    const auto steps = strided_steps(1000, 10);
    for (std::uint64_t trial = 0; trial < 2; ++trial) {
      const auto z = random_vector(40, 30 + trial);
      auto xbar = random_vector(40, 40 + trial);
      const double n = std::sqrt(dot(xbar, xbar));
      for (auto& v : xbar) v /= n;
      const auto zbar = backprop_through_sampler(model, z, s, steps, xbar);
      const auto fd = gradcheck::central_difference(
          [&](std::span<const double> p) { return dot(xbar, generate(model, p, s, steps)); }, z);
      CHECK(gradcheck::relative_error(zbar, fd) < 1e-4);

      auto scaled = xbar;
      for (auto& v : scaled) v *= -2.5;
      const auto zs = backprop_through_sampler(model, z, s, steps, scaled);
      for (std::size_t i = 0; i < 40; ++i) CHECK(std::abs(zs[i] + 2.5 * zbar[i]) <= 1e-10 * std::max(1.0, std::abs(zs[i])));
    }
  }
  SUBCASE("rejects bad cotangents") {
    const auto s = linear_schedule(10);
    std::vector<double> xbar(40, 0.0);
    xbar[3] = std::nan("");
    CHECK_THROWS_AS(backprop_through_sampler(ZeroPredictor(40), random_vector(40, 1), s, {}, xbar), InvalidArgument);
    CHECK_THROWS_AS(backprop_through_sampler(ZeroPredictor(40), random_vector(40, 1), s, {}, std::vector<double>(3)),
                    InvalidArgument);
  }
}

TEST_CASE("ancestral sampling") {
  const auto s1 = linear_schedule(1, 0.01, 0.01);
  std::mt19937_64 rng(22);
  auto replay = rng;
  const auto x = ddpm_sample(ZeroPredictor(5), rng, s1);
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < 5; ++i) {
    // Single step from x_1 is the mean only.
    CHECK(x[i] == doctest::Approx(normal(replay) / std::sqrt(0.99)).epsilon(1e-15));
  }

  const auto s = linear_schedule(20);
  auto c = small_config(20);
  const auto model = nn::Denoiser::init(c);
  std::mt19937_64 a(23), b(23), other(24);
  const auto xa = ddpm_sample(model, a, s);
  CHECK(xa == ddpm_sample(model, b, s));
  CHECK(xa != ddpm_sample(model, other, s));
}

TEST_CASE("training updates") {
  const auto s = linear_schedule(10);
  const auto init = nn::Denoiser::init(small_config(10));
  std::vector<std::vector<double>> data;
  for (std::uint64_t k = 0; k < 6; ++k) data.push_back(random_vector(8, 50 + k, 0.3));

  TrainConfig cfg;
  cfg.num_steps = 30;
  cfg.batch_size = 3;
  cfg.log_every = 10;
  cfg.seed = 9;

  SUBCASE("zero learning rate leaves the weights unchanged") {
    cfg.learning_rate = 0.0;
    const auto r = train(init, data, cfg, s);
    CHECK(std::vector<double>(r.weights.parameters().begin(), r.weights.parameters().end()) ==
          std::vector<double>(init.parameters().begin(), init.parameters().end()));
    for (std::size_t i = 0; i < init.parameters().size(); ++i) {
      CHECK(r.ema.parameters()[i] == doctest::Approx(init.parameters()[i]).epsilon(1e-14));
    }
  }
  SUBCASE("same seed reproduces the curve and weights") {
    cfg.learning_rate = 1e-3;
    std::vector<LossRecord> logged;
    const auto a = train(init, data, cfg, s, [&](const LossRecord& r) { logged.push_back(r); });
    const auto b = train(init, data, cfg, s);
    CHECK(a.step_losses == b.step_losses);
    CHECK(std::vector<double>(a.weights.parameters().begin(), a.weights.parameters().end()) ==
          std::vector<double>(b.weights.parameters().begin(), b.weights.parameters().end()));
    CHECK(std::vector<double>(a.ema.parameters().begin(), a.ema.parameters().end()) ==
          std::vector<double>(b.ema.parameters().begin(), b.ema.parameters().end()));
    REQUIRE(a.curve.size() == 3);
    CHECK(logged.size() == 3);
    CHECK(a.curve[1].step == 20);
    CHECK(a.curve[1].loss == doctest::Approx(windowed_loss(a.step_losses, 20, 10)));
    CHECK(a.weights.parameters()[10] != init.parameters()[10]);

    std::ostringstream csv;
    write_loss_csv(csv, a.curve);
    CHECK(csv.str().rfind("step,loss,ema_loss\n10,", 0) == 0);

    cfg.seed = 10;
    CHECK(train(init, data, cfg, s).step_losses != a.step_losses);
  }
  SUBCASE("non-finite loss aborts with the step") {
    data[2][4] = std::nan("");
    cfg.learning_rate = 1e-3;
    try {
      (void)train(init, data, cfg, s);
      FAIL("expected a numerical failure");
    } catch (const NumericalFailure& e) {
      CHECK(std::string(e.what()).find("at step ") != std::string::npos);
    }
  }
  SUBCASE("preconditions") {
    cfg.ema_decay = 1.0;
    CHECK_THROWS_AS(train(init, data, cfg, s), InvalidArgument);
    cfg.ema_decay = 0.9;
    CHECK_THROWS_AS(train(init, std::span<const std::vector<double>>{}, cfg, s), InvalidArgument);
    CHECK_THROWS_AS(train(init, data, cfg, linear_schedule(11)), InvalidArgument);
  }
}

TEST_CASE("windowed loss") {
  const std::vector<double> l{4, 2, 6, 8};
  CHECK(windowed_loss(l, 1, 2) == 4.0);
  CHECK(windowed_loss(l, 4, 2) == 7.0);
  CHECK(windowed_loss(l, 3, 100) == 4.0);
  CHECK_THROWS_AS(windowed_loss(l, 5, 2), InvalidArgument);
}

TEST_CASE("checkpoint roundtrip") {
  const auto model = nn::Denoiser::init(small_config(10));
  const auto s = linear_schedule(10, 2e-4, 0.03);
  std::stringstream buf;
  write_checkpoint(buf, model, s, "{\"train\":{}}");
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 7) == "LFOILDM");
  CHECK(bytes.size() == 8 + 4 + 7 * 8 + 2 * 8 + 8 + 12 + 8 + 8 * model.parameters().size());

  std::istringstream in(bytes);
  const auto c = read_checkpoint(in);
  CHECK(c.model.config() == model.config());
  CHECK(std::vector<double>(c.model.parameters().begin(), c.model.parameters().end()) ==
        std::vector<double>(model.parameters().begin(), model.parameters().end()));
  CHECK(c.schedule.alpha_bar == s.alpha_bar);
  CHECK(c.run_config == "{\"train\":{}}");

  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_checkpoint(truncated), MalformedInput);
  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream wrong(bad);
  CHECK_THROWS_AS(read_checkpoint(wrong), MalformedInput);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), InvalidArgument);
}
