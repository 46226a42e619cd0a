#include "latentfoil/diffusion.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>

#include "latentfoil/errors.hpp"

namespace latentfoil::diffusion {

using ad::Shape;
using ad::Tensor;
using ad::Var;

double NoiseSchedule::beta_at(int t) const {
  if (t < 1 || t > T) throw InvalidArgument("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  return beta[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_at(int t) const { return 1.0 - beta_at(t); }

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > T) throw InvalidArgument("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
  return alpha_bar[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw InvalidArgument("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw InvalidArgument("schedule needs 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  const auto n = static_cast<std::size_t>(T);
  s.beta.resize(n);
  s.alpha.resize(n);
  s.alpha_bar.resize(n);
  double prod = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    s.beta[i] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (T - 1);
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

std::vector<double> forward_diffuse(std::span<const double> x0, int t, std::span<const double> eps,
                                    const NoiseSchedule& schedule) {
  if (t < 1) throw InvalidArgument("forward_diffuse needs t >= 1");
  if (x0.size() != eps.size()) throw InvalidArgument("forward_diffuse: x0 and eps differ in length");
  const double ab = schedule.alpha_bar_at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

std::vector<int> strided_steps(int T, int count) {
  if (T < 1 || count < 1) throw InvalidArgument("strided_steps needs positive T and count");
  count = std::min(count, T);
  std::vector<int> steps(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    steps[static_cast<std::size_t>(k)] =
        static_cast<int>(std::lround(static_cast<double>(T) * (count - k) / static_cast<double>(count)));
  }
  return steps;
}

void validate_steps(std::span<const int> steps, int T) {
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i] < 1 || steps[i] > T) throw InvalidArgument("sampling step " + std::to_string(steps[i]) + " out of range");
    if (i > 0 && steps[i] >= steps[i - 1]) throw InvalidArgument("sampling steps must be strictly decreasing");
  }
}

Var predicted_x0(const nn::NoisePredictor& model, Var x_t, int t, const NoiseSchedule& schedule) {
  const double ab = schedule.alpha_bar_at(t);
  const Var eps = model.predict(x_t, t);
  return (1.0 / std::sqrt(ab)) * (x_t - std::sqrt(1.0 - ab) * eps);
}

Var ddim_step(const nn::NoisePredictor& model, Var x_t, int t, const NoiseSchedule& schedule, int t_prev) {
  if (t_prev < 0) t_prev = t - 1;
  if (t < 1 || t_prev >= t) throw InvalidArgument("ddim_step needs 0 <= t_prev < t");
  const double ab = schedule.alpha_bar_at(t);
  const double ab_prev = schedule.alpha_bar_at(t_prev);
  const Var eps = model.predict(x_t, t);
  const Var f = (1.0 / std::sqrt(ab)) * (x_t - std::sqrt(1.0 - ab) * eps);
  if (t_prev == 0) return f;
  return std::sqrt(ab_prev) * f + std::sqrt(1.0 - ab_prev) * eps;
}

Var generate(const nn::NoisePredictor& model, Var z, const NoiseSchedule& schedule, std::span<const int> steps) {
  if (z.value().size() != model.dim()) throw InvalidArgument("latent vector length does not match the model");
  std::vector<int> all;
  if (steps.empty()) {
    for (int t = schedule.T; t >= 1; --t) all.push_back(t);
    steps = all;
  }
  validate_steps(steps, schedule.T);
  Var x = z;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const int next = k + 1 < steps.size() ? steps[k + 1] : 0;
    x = ddim_step(model, x, steps[k], schedule, next);
  }
  return x;
}

std::vector<double> generate(const nn::NoisePredictor& model, std::span<const double> z,
                             const NoiseSchedule& schedule, std::span<const int> steps) {
  ad::Tape tape;
  const Var zv = tape.constant(Tensor::vector({z.begin(), z.end()}));
  return generate(model, zv, schedule, steps).value().data;
}

std::vector<double> backprop_through_sampler(const nn::NoisePredictor& model, std::span<const double> z,
                                             const NoiseSchedule& schedule, std::span<const int> steps,
                                             std::span<const double> xbar) {
  if (xbar.size() != z.size()) throw InvalidArgument("cotangent length does not match the latent vector");
  for (double v : xbar) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite cotangent");
  }
  ad::Tape tape;
  const Var zv = tape.variable(Tensor::vector({z.begin(), z.end()}));
  const Var x = generate(model, zv, schedule, steps);
  return tape.backward(x, Tensor::vector({xbar.begin(), xbar.end()}))[zv].data;
}

std::vector<double> ddpm_sample(const nn::NoisePredictor& model, std::mt19937_64& rng, const NoiseSchedule& schedule) {
  std::normal_distribution<double> normal;
  const std::size_t d = model.dim();
  std::vector<double> x(d);
  for (auto& v : x) v = normal(rng);
  for (int t = schedule.T; t >= 1; --t) {
    ad::Tape tape;
    const auto eps = model.predict(tape.constant(Tensor::vector(x)), t).value().data;
    const double beta = schedule.beta_at(t);
    const double ab = schedule.alpha_bar_at(t);
    const double coef = beta / std::sqrt(1.0 - ab);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha_at(t));
    const double sigma = t > 1 ? std::sqrt((1.0 - schedule.alpha_bar_at(t - 1)) / (1.0 - ab) * beta) : 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      x[i] = inv_sqrt_alpha * (x[i] - coef * eps[i]);
      if (t > 1) x[i] += sigma * normal(rng);
    }
  }
  return x;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || batch_size == 0 || log_every == 0) {
    throw InvalidArgument("training needs a nonnegative learning rate and positive batch size and log interval");
  }
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw InvalidArgument("ema_decay must lie in (0, 1)");
}

Var training_loss(const Predict& predict, std::span<const std::vector<double>> batch, std::mt19937_64& rng,
                  const NoiseSchedule& schedule, ad::Tape& tape) {
  if (batch.empty()) throw InvalidArgument("training batch is empty");
  std::uniform_int_distribution<int> pick_t(1, schedule.T);
  std::normal_distribution<double> normal;
  Var total;
  for (const auto& x0 : batch) {
    const int t = pick_t(rng);
    std::vector<double> eps(x0.size());
    for (auto& v : eps) v = normal(rng);
    const Var x_t = tape.constant(Tensor::vector(forward_diffuse(x0, t, eps, schedule)));
    const Var diff = tape.constant(Tensor::vector(eps)) - predict(x_t, t);
    const Var term = sum(diff * diff);
    total = total.valid() ? total + term : term;
  }
  return (1.0 / static_cast<double>(batch.size())) * total;
}

Var training_loss(const nn::Denoiser& model, std::span<const std::vector<double>> batch, std::mt19937_64& rng,
                  const NoiseSchedule& schedule, ad::Tape& tape) {
  return training_loss([&model](Var x, int t) { return model.forward(x, t, true); }, batch, rng, schedule, tape);
}

double windowed_loss(std::span<const double> step_losses, std::size_t step, std::size_t window) {
  if (step == 0 || step > step_losses.size()) throw InvalidArgument("windowed_loss: step out of range");
  const std::size_t first = step > window ? step - window : 0;
  double acc = 0.0;
  for (std::size_t i = first; i < step; ++i) acc += step_losses[i];
  return acc / static_cast<double>(step - first);
}

TrainResult train(const nn::Denoiser& init, std::span<const std::vector<double>> dataset, const TrainConfig& config,
                  const NoiseSchedule& schedule, const std::function<void(const LossRecord&)>& on_log) {
  config.validate();
  if (dataset.empty()) throw InvalidArgument("training dataset is empty");
  if (init.config().num_timesteps != schedule.T) {
    throw InvalidArgument("denoiser was built for " + std::to_string(init.config().num_timesteps) +
                          " timesteps, schedule has " + std::to_string(schedule.T));
  }
  for (const auto& x : dataset) {
    if (x.size() != init.dim()) throw InvalidArgument("dataset vector length does not match the denoiser");
  }
  constexpr double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8, loss_smoothing = 0.99;
  TrainResult out{init, init, {}, {}};
  auto theta = out.weights.parameters();
  auto ema = out.ema.parameters();
  std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0);
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::vector<std::vector<double>> batch(config.batch_size);
  double smoothed = 0.0;
  out.step_losses.reserve(config.num_steps);

  for (std::size_t step = 1; step <= config.num_steps; ++step) {
    for (auto& b : batch) b = dataset[pick(rng)];
    ad::Tape tape;
    const Var loss = training_loss(out.weights, batch, rng, schedule, tape);
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericalFailure("non-finite training loss at step " + std::to_string(step));
    const auto grads = tape.backward(loss);
    const auto g = out.weights.parameter_gradient(tape, grads);

    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      theta[i] -= config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + adam_eps);
      ema[i] = config.ema_decay * ema[i] + (1.0 - config.ema_decay) * theta[i];
    }

    out.step_losses.push_back(value);
    smoothed = step == 1 ? value : loss_smoothing * smoothed + (1.0 - loss_smoothing) * value;
    if (step % config.log_every == 0 || step == config.num_steps) {
      LossRecord rec{step, windowed_loss(out.step_losses, step, config.log_every), smoothed};
      out.curve.push_back(rec);
      if (on_log) on_log(rec);
    }
  }
  return out;
}

void write_loss_csv(std::ostream& out, std::span<const LossRecord> curve) {
  out << "step,loss,ema_loss\n";
  out.precision(17);
  for (const auto& r : curve) out << r.step << ',' << r.loss << ',' << r.ema_loss << '\n';
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'L', 'F', 'O', 'I', 'L', 'D', 'M', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_bytes(std::istream& in, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw MalformedInput("checkpoint is truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}
std::uint32_t get_u32(std::istream& in) { return static_cast<std::uint32_t>(get_bytes(in, 4)); }
std::uint64_t get_u64(std::istream& in) { return get_bytes(in, 8); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

void write_checkpoint(std::ostream& out, const nn::Denoiser& model, const NoiseSchedule& schedule,
                      const std::string& run_config) {
  const auto& c = model.config();
  out.write(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_u64(out, c.d);
  put_u64(out, c.channels);
  put_u64(out, c.depth);
  put_u64(out, c.time_embed_dim);
  put_u64(out, static_cast<std::uint64_t>(c.num_timesteps));
  put_u64(out, c.seed);
  put_u64(out, static_cast<std::uint64_t>(schedule.T));
  put_f64(out, schedule.beta_start);
  put_f64(out, schedule.beta_end);
  put_u64(out, run_config.size());
  out.write(run_config.data(), static_cast<std::streamsize>(run_config.size()));
  const auto theta = model.parameters();
  put_u64(out, theta.size());
  for (double v : theta) put_f64(out, v);
  if (!out) throw NumericalFailure("failed to write checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw MalformedInput("not a latentfoil checkpoint");
  const auto version = get_u32(in);
  if (version != kVersion) throw MalformedInput("unsupported checkpoint version " + std::to_string(version));
  nn::DenoiserConfig c;
  c.d = get_u64(in);
  c.channels = get_u64(in);
  c.depth = get_u64(in);
  c.time_embed_dim = get_u64(in);
  c.num_timesteps = static_cast<int>(get_u64(in));
  c.seed = get_u64(in);
  const auto T = static_cast<int>(get_u64(in));
  const double beta_start = get_f64(in);
  const double beta_end = get_f64(in);
  const auto len = get_u64(in);
  if (len > (std::uint64_t{1} << 30)) throw MalformedInput("checkpoint config echo is implausibly long");
  std::string run_config(len, '\0');
  in.read(run_config.data(), static_cast<std::streamsize>(len));
  if (!in) throw MalformedInput("checkpoint is truncated");
  c.validate();
  const auto count = get_u64(in);
  if (count != nn::parameter_count(c)) {
    throw MalformedInput("checkpoint holds " + std::to_string(count) + " parameters, its config needs " +
                         std::to_string(nn::parameter_count(c)));
  }
  std::vector<double> theta(count);
  for (auto& v : theta) v = get_f64(in);
  return Checkpoint{nn::Denoiser(c, std::move(theta)), linear_schedule(T, beta_start, beta_end), std::move(run_config)};
}

void save_checkpoint(const std::string& path, const nn::Denoiser& model, const NoiseSchedule& schedule,
                     const std::string& run_config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, model, schedule, run_config);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("checkpoint '" + path + "' does not exist or is unreadable");
  return read_checkpoint(in);
}

// ---- analytic predictors ----------------------------------------------------

Var ZeroPredictor::predict(Var x, int) const { return x.tape().constant(Tensor(x.value().shape, 0.0)); }

LinearPredictor::LinearPredictor(Tensor m, std::vector<double> c) : m_(std::move(m)), c_(std::move(c)) {
  if (m_.shape.rank != ad::Rank::matrix || m_.shape.rows != c_.size() || m_.shape.cols != c_.size()) {
    throw InvalidArgument("LinearPredictor needs a square matrix matching the offset");
  }
}

Var LinearPredictor::predict(Var x, int) const {
  ad::Tape& tape = x.tape();
  return matvec(tape.intern(&m_, m_, false), x) + tape.intern(&c_, Tensor::vector(c_), false);
}

}  // namespace latentfoil::diffusion
