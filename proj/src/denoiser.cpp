#include "latentfoil/denoiser.hpp"

#include <cmath>
#include <random>

#include "latentfoil/errors.hpp"

namespace latentfoil::nn {

using ad::Shape;
using ad::Tensor;
using ad::Var;

void DenoiserConfig::validate() const {
  if (d == 0 || channels == 0 || time_embed_dim == 0 || time_embed_dim % 2 != 0) {
    throw InvalidArgument("denoiser needs positive d and channels and an even time embedding width");
  }
  if (depth > 8 || d % (std::size_t{1} << depth) != 0) {
    throw InvalidArgument("sequence length " + std::to_string(d) + " is not divisible by 2^" + std::to_string(depth));
  }
  if (num_timesteps < 1) throw InvalidArgument("num_timesteps must be positive");
}

namespace {

void add_linear(std::vector<ParamBlock>& out, std::size_t& offset, const std::string& name, std::size_t rows,
                std::size_t cols, std::size_t fan_in) {
  out.push_back({name + ".w", offset, rows, cols, fan_in});
  offset += rows * cols;
  out.push_back({name + ".b", offset, rows, 0, fan_in});
  offset += rows;
}

void add_residual(std::vector<ParamBlock>& out, std::size_t& offset, const std::string& prefix, std::size_t cin,
                  std::size_t cout, std::size_t emb) {
  add_linear(out, offset, prefix + ".conv1", cout, cin * 3, cin * 3);
  add_linear(out, offset, prefix + ".emb", cout, emb, emb);
  add_linear(out, offset, prefix + ".conv2", cout, cout * 3, cout * 3);
  if (cin != cout) add_linear(out, offset, prefix + ".skip", cout, cin, cin);
}

std::string level(const char* kind, std::size_t l) { return std::string(kind) + std::to_string(l); }

}  // namespace

std::vector<ParamBlock> parameter_layout(const DenoiserConfig& c) {
  c.validate();
  std::vector<ParamBlock> out;
  std::size_t offset = 0;
  const std::size_t e = c.time_embed_dim, ch = c.channels;
  add_linear(out, offset, "time.l1", e, e, e);
  add_linear(out, offset, "time.l2", e, e, e);
  add_linear(out, offset, "in", ch, 3, 3);
  for (std::size_t l = 0; l < c.depth; ++l) {
    add_residual(out, offset, level("down", l) + ".res0", ch, ch, e);
    add_residual(out, offset, level("down", l) + ".res1", ch, ch, e);
  }
  add_residual(out, offset, "mid.res", ch, ch, e);
  for (std::size_t l = c.depth; l-- > 0;) {
    add_residual(out, offset, level("up", l) + ".res0", 2 * ch, ch, e);
    add_residual(out, offset, level("up", l) + ".res1", ch, ch, e);
  }
  add_linear(out, offset, "out", 1, 3 * ch, 3 * ch);
  return out;
}

std::size_t parameter_count(const DenoiserConfig& config) {
  const auto layout = parameter_layout(config);
  return layout.back().offset + layout.back().size();
}

std::vector<double> time_features(int t, int num_timesteps, std::size_t dim) {
  const std::size_t half = dim / 2;
  const double s = 1000.0 * static_cast<double>(t) / static_cast<double>(num_timesteps);
  std::vector<double> out(dim);
  for (std::size_t k = 0; k < half; ++k) {
    const double f = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    out[k] = std::sin(s * f);
    out[half + k] = std::cos(s * f);
  }
  return out;
}

Denoiser::Denoiser(DenoiserConfig config, std::vector<double> theta)
    : config_(config), layout_(parameter_layout(config)), theta_(std::move(theta)) {
  if (theta_.size() != parameter_count(config_)) {
    throw InvalidArgument("parameter vector has " + std::to_string(theta_.size()) + " entries, layout needs " +
                          std::to_string(parameter_count(config_)));
  }
  for (double v : theta_) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite denoiser parameter");
  }
  for (std::size_t i = 0; i < layout_.size(); ++i) index_.emplace(layout_[i].name, i);
  std::size_t len = config_.d;
  for (std::size_t l = 0; l < config_.depth; ++l) {
    Tensor pool(Shape::matrix(len, len / 2)), up(Shape::matrix(len / 2, len));
    for (std::size_t j = 0; j < len / 2; ++j) {
      pool.at(2 * j, j) = pool.at(2 * j + 1, j) = 0.5;
      up.at(j, 2 * j) = up.at(j, 2 * j + 1) = 1.0;
    }
    pool_.push_back(std::move(pool));
    upsample_.push_back(std::move(up));
    len /= 2;
  }
}

Denoiser Denoiser::init(const DenoiserConfig& config) {
  const auto layout = parameter_layout(config);
  std::vector<double> theta(parameter_count(config), 0.0);
  std::mt19937_64 rng(config.seed);
  for (const auto& b : layout) {
    if (b.cols == 0) continue;
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(static_cast<double>(b.fan_in)),
                                             1.0 / std::sqrt(static_cast<double>(b.fan_in)));
    for (std::size_t i = 0; i < b.size(); ++i) theta[b.offset + i] = u(rng);
  }
  return Denoiser(config, std::move(theta));
}

std::size_t Denoiser::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("no parameter block named '" + name + "'");
  return it->second;
}

std::span<double> Denoiser::block(const std::string& name) {
  const auto& b = layout_[index_of(name)];
  return std::span(theta_).subspan(b.offset, b.size());
}

std::span<const double> Denoiser::block(const std::string& name) const {
  const auto& b = layout_[index_of(name)];
  return std::span<const double>(theta_).subspan(b.offset, b.size());
}

Var Denoiser::param(ad::Tape& tape, const std::string& name, bool train) const {
  const std::size_t i = index_of(name);
  const void* key = &layout_[i];
  if (auto v = tape.interned(key)) return *v;
  const auto& b = layout_[i];
  Tensor value(b.shape(), std::vector<double>(theta_.begin() + static_cast<std::ptrdiff_t>(b.offset),
                                               theta_.begin() + static_cast<std::ptrdiff_t>(b.offset + b.size())));
  return tape.intern(key, value, train);
}

Var Denoiser::residual_block(Var x, Var emb, const std::string& prefix, bool train) const {
  ad::Tape& tape = x.tape();
  const std::size_t len = x.value().shape.cols;
  Var h = conv1d(silu(x), param(tape, prefix + ".conv1.w", train), param(tape, prefix + ".conv1.b", train));
  const Var e = matvec(param(tape, prefix + ".emb.w", train), emb) + param(tape, prefix + ".emb.b", train);
  h = h + broadcast(e, Shape::matrix(e.value().size(), len), ad::Broadcast::repeat_cols);
  h = conv1d(silu(h), param(tape, prefix + ".conv2.w", train), param(tape, prefix + ".conv2.b", train));
  const Var skip = index_.count(prefix + ".skip.w")
                       ? conv1d(x, param(tape, prefix + ".skip.w", train), param(tape, prefix + ".skip.b", train))
                       : x;
  return skip + h;
}

Var Denoiser::forward(Var x, int t, bool train) const {
  if (t < 1 || t > config_.num_timesteps) {
    throw InvalidArgument("timestep " + std::to_string(t) + " outside [1, " + std::to_string(config_.num_timesteps) +
                          "]");
  }
  if (x.value().size() != config_.d) {
    throw InvalidArgument("denoiser input has length " + std::to_string(x.value().size()) + ", expected " +
                          std::to_string(config_.d));
  }
  ad::Tape& tape = x.tape();
  auto linear = [&](Var v, const std::string& name) {
    return matvec(param(tape, name + ".w", train), v) + param(tape, name + ".b", train);
  };
  const Var feats = tape.constant(Tensor::vector(time_features(t, config_.num_timesteps, config_.time_embed_dim)));
  const Var emb = silu(linear(silu(linear(feats, "time.l1")), "time.l2"));

  Var h = conv1d(reshape(x, Shape::matrix(1, config_.d)), param(tape, "in.w", train), param(tape, "in.b", train));
  std::vector<Var> skips;
  for (std::size_t l = 0; l < config_.depth; ++l) {
    h = residual_block(h, emb, level("down", l) + ".res0", train);
    h = residual_block(h, emb, level("down", l) + ".res1", train);
    skips.push_back(h);
    h = matmul(h, tape.intern(&pool_[l], pool_[l], false));
  }
  h = residual_block(h, emb, "mid.res", train);
  for (std::size_t l = config_.depth; l-- > 0;) {
    h = matmul(h, tape.intern(&upsample_[l], upsample_[l], false));
    h = concat(h, skips[l], ad::Axis::rows);
    h = residual_block(h, emb, level("up", l) + ".res0", train);
    h = residual_block(h, emb, level("up", l) + ".res1", train);
  }
  const Var out = conv1d(silu(h), param(tape, "out.w", train), param(tape, "out.b", train));
  return reshape(out, Shape::vector(config_.d));
}

std::vector<double> Denoiser::operator()(std::span<const double> x, int t) const {
  ad::Tape tape;
  const Var xv = tape.constant(Tensor::vector({x.begin(), x.end()}));
  return forward(xv, t, false).value().data;
}

std::vector<double> Denoiser::parameter_gradient(ad::Tape& tape, const ad::Gradients& grads) const {
  std::vector<double> g(theta_.size(), 0.0);
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    const auto v = tape.interned(&layout_[i]);
    if (!v) continue;
    const Tensor& gi = grads[*v];
    for (std::size_t k = 0; k < gi.size(); ++k) g[layout_[i].offset + k] = gi[k];
  }
  return g;
}

}  // namespace latentfoil::nn
