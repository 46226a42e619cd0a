#pragma once

// Noise-prediction network eps_theta(x_t, t) on length-d sequences.
//
// A reduced 1D U-Net: lift conv (1 -> C), `depth` levels of two residual
// blocks followed by average pooling, a middle residual block, and mirrored
// levels of nearest-neighbour upsampling, skip concatenation (2C channels)
// and two residual blocks, then SiLU and an output conv (C -> 1). Every
// residual block adds a projection of the time embedding:
//     h = conv3(silu(x)) + W silu(emb) + b;  out = skip(x) + conv3(silu(h)).
// The embedding is sinusoidal in 1000 t / T followed by Linear-SiLU-Linear.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "latentfoil/autodiff.hpp"

namespace latentfoil::nn {

struct DenoiserConfig {
  std::size_t d = 40;
  std::size_t channels = 32;
  std::size_t depth = 2;
  std::size_t time_embed_dim = 64;
  int num_timesteps = 1000;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;  // 0 for bias vectors
  std::size_t fan_in = 0;

  std::size_t size() const { return cols == 0 ? rows : rows * cols; }
  ad::Shape shape() const { return cols == 0 ? ad::Shape::vector(rows) : ad::Shape::matrix(rows, cols); }
};

// Named slices of the flat parameter vector, in storage order.
std::vector<ParamBlock> parameter_layout(const DenoiserConfig& config);
std::size_t parameter_count(const DenoiserConfig& config);

// Anything that predicts the injected noise on a tape. The diffusion sampler
// is written against this so tests can substitute analytic stubs.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual std::size_t dim() const = 0;
  virtual ad::Var predict(ad::Var x, int t) const = 0;
};

class Denoiser : public NoisePredictor {
 public:
  Denoiser(DenoiserConfig config, std::vector<double> theta);

  // Kaiming-uniform fan-in weights (bound 1/sqrt(fan_in)), zero biases.
  static Denoiser init(const DenoiserConfig& config);

  const DenoiserConfig& config() const { return config_; }
  const std::vector<ParamBlock>& layout() const { return layout_; }
  std::span<const double> parameters() const { return theta_; }
  std::span<double> parameters() { return theta_; }
  std::span<double> block(const std::string& name);
  std::span<const double> block(const std::string& name) const;

  std::size_t dim() const override { return config_.d; }
  ad::Var predict(ad::Var x, int t) const override { return forward(x, t, false); }

  // x: vector(d) on any tape. With `train`, every parameter block becomes a
  // differentiable leaf of that tape (attached once per tape).
  ad::Var forward(ad::Var x, int t, bool train) const;
  // Untaped convenience.
  std::vector<double> operator()(std::span<const double> x, int t) const;

  // Flat dL/dtheta from a sweep over a tape the model was recorded on with train = true.
  std::vector<double> parameter_gradient(ad::Tape& tape, const ad::Gradients& grads) const;

 private:
  ad::Var param(ad::Tape& tape, const std::string& name, bool train) const;
  ad::Var residual_block(ad::Var x, ad::Var emb, const std::string& prefix, bool train) const;
  std::size_t index_of(const std::string& name) const;

  DenoiserConfig config_;
  std::vector<ParamBlock> layout_;
  std::vector<double> theta_;
  std::unordered_map<std::string, std::size_t> index_;
  // Pooling (L x L/2) and upsampling (L/2 x L) matrices per level.
  std::vector<ad::Tensor> pool_, upsample_;
};

// Sinusoidal features of 1000 t / T, `dim` entries (sin half then cos half).
std::vector<double> time_features(int t, int num_timesteps, std::size_t dim);

}  // namespace latentfoil::nn
