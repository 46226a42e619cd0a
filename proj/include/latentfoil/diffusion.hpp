#pragma once

// DDPM training and sampling, and the deterministic DDIM map G(z) = x_0.
//
// Timesteps are 1-based: t = 1..T, with alpha_bar(0) = 1. A DDIM step from
// t to s < t is
//     f = (x_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)
//     x_s = sqrt(ab_s) f + sqrt(1 - ab_s) eps,    eps = eps_theta(x_t, t).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "latentfoil/autodiff.hpp"
#include "latentfoil/denoiser.hpp"

namespace latentfoil::diffusion {

struct NoiseSchedule {
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;       // beta[t - 1]
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // cumulative product

  double beta_at(int t) const;
  double alpha_at(int t) const;
  // alpha_bar(0) = 1.
  double alpha_bar_at(int t) const;
};

NoiseSchedule linear_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02);

std::vector<double> forward_diffuse(std::span<const double> x0, int t, std::span<const double> eps,
                                    const NoiseSchedule& schedule);

// ---- sampling -------------------------------------------------------------

// `count` steps T = t_0 > t_1 > ... > t_{count-1} >= 1 with t_k = round(T (count - k) / count).
std::vector<int> strided_steps(int T, int count = 50);
// Throws InvalidArgument unless strictly decreasing within [1, T].
void validate_steps(std::span<const int> steps, int T);

ad::Var predicted_x0(const nn::NoisePredictor& model, ad::Var x_t, int t, const NoiseSchedule& schedule);
// Deterministic step to t_prev (default t - 1).
ad::Var ddim_step(const nn::NoisePredictor& model, ad::Var x_t, int t, const NoiseSchedule& schedule,
                  int t_prev = -1);

// Records the whole chain on z's tape. Empty `steps` means every t from T to 1.
ad::Var generate(const nn::NoisePredictor& model, ad::Var z, const NoiseSchedule& schedule,
                 std::span<const int> steps);
std::vector<double> generate(const nn::NoisePredictor& model, std::span<const double> z,
                             const NoiseSchedule& schedule, std::span<const int> steps);

// zbar = xbar^T dG/dz from one backward sweep over the taped chain.
std::vector<double> backprop_through_sampler(const nn::NoisePredictor& model, std::span<const double> z,
                                             const NoiseSchedule& schedule, std::span<const int> steps,
                                             std::span<const double> xbar);

// Ancestral sampling with posterior variance (1 - ab_{t-1}) / (1 - ab_t) beta_t.
std::vector<double> ddpm_sample(const nn::NoisePredictor& model, std::mt19937_64& rng, const NoiseSchedule& schedule);

// ---- training -------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 1e-5;
  std::size_t batch_size = 2;
  std::size_t num_steps = 140000;
  double ema_decay = 0.995;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;

  void validate() const;
};

using Predict = std::function<ad::Var(ad::Var x_t, int t)>;

// Mean over the batch of ||eps - eps_hat(sqrt(ab_t) x0 + sqrt(1 - ab_t) eps, t)||^2
// with t ~ U{1..T} and eps ~ N(0, I) drawn per element, in that order.
ad::Var training_loss(const Predict& predict, std::span<const std::vector<double>> batch, std::mt19937_64& rng,
                      const NoiseSchedule& schedule, ad::Tape& tape);
ad::Var training_loss(const nn::Denoiser& model, std::span<const std::vector<double>> batch, std::mt19937_64& rng,
                      const NoiseSchedule& schedule, ad::Tape& tape);

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;      // mean step loss over the last log window
  double ema_loss = 0.0;  // exponential average of step losses (0.99)
};

struct TrainResult {
  nn::Denoiser weights;
  nn::Denoiser ema;
  std::vector<double> step_losses;
  std::vector<LossRecord> curve;
};

// Adam (0.9, 0.999, 1e-8) on training_loss with an EMA copy of the weights.
// Throws NumericalFailure naming the step on a non-finite loss.
TrainResult train(const nn::Denoiser& init, std::span<const std::vector<double>> dataset, const TrainConfig& config,
                  const NoiseSchedule& schedule, const std::function<void(const LossRecord&)>& on_log = {});

// Mean of step losses over the `window` steps ending at `step` (1-based).
double windowed_loss(std::span<const double> step_losses, std::size_t step, std::size_t window = 100);

void write_loss_csv(std::ostream& out, std::span<const LossRecord> curve);

// ---- checkpoints ----------------------------------------------------------

struct Checkpoint {
  nn::Denoiser model;
  NoiseSchedule schedule;
  std::string run_config;  // echo of the configuration that produced it
};

void save_checkpoint(const std::string& path, const nn::Denoiser& model, const NoiseSchedule& schedule,
                     const std::string& run_config);
Checkpoint load_checkpoint(const std::string& path);
void write_checkpoint(std::ostream& out, const nn::Denoiser& model, const NoiseSchedule& schedule,
                      const std::string& run_config);
Checkpoint read_checkpoint(std::istream& in);

// ---- analytic predictors for tests -------------------------------------------

class ZeroPredictor : public nn::NoisePredictor {
 public:
  explicit ZeroPredictor(std::size_t d) : d_(d) {}
  std::size_t dim() const override { return d_; }
  ad::Var predict(ad::Var x, int t) const override;

 private:
  std::size_t d_;
};

// eps_hat = M x + c with fixed M, c.
class LinearPredictor : public nn::NoisePredictor {
 public:
  LinearPredictor(ad::Tensor m, std::vector<double> c);
  std::size_t dim() const override { return c_.size(); }
  ad::Var predict(ad::Var x, int t) const override;

 private:
  ad::Tensor m_;
  std::vector<double> c_;
};

}  // namespace latentfoil::diffusion
