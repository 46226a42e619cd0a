#include "latentfoil/design.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "latentfoil/errors.hpp"

namespace latentfoil::optim {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::hh: return "hh";
    case Mode::latent: return "latent";
    case Mode::hh_scaled: return "hh-scaled";
  }
  return "unknown";
}

Mode parse_mode(std::string_view text) {
  if (text == "hh") return Mode::hh;
  if (text == "latent") return Mode::latent;
  if (text == "hh-scaled") return Mode::hh_scaled;
  throw InvalidArgument("unknown mode '" + std::string(text) + "' (expected hh, latent or hh-scaled)");
}

std::string to_string(Constraint::Quantity q) { return q == Constraint::Quantity::cl ? "cl" : "tc"; }

double epsilon_rel(std::span<const Constraint> constraints, std::span<const double> achieved) {
  if (constraints.size() != achieved.size()) throw InvalidArgument("epsilon_rel: one achieved value per constraint");
  double eps = 0.0;
  for (std::size_t i = 0; i < constraints.size(); ++i) {
    if (constraints[i].bound == 0.0) throw InvalidArgument("epsilon_rel: zero bound");
    eps = std::max(eps, (constraints[i].bound - achieved[i]) / constraints[i].bound);
  }
  return eps;
}

std::vector<bool> scaled_mask(std::size_t d, double fraction) {
  if (!(fraction >= 0.0 && fraction < 0.5)) throw InvalidArgument("scaled mask fraction must lie in [0, 0.5)");
  const auto basis = geometry::bump_basis(d);
  std::vector<bool> mask(d, false);
  if (fraction == 0.0) return mask;
  for (std::size_t k = 0; k < basis.size(); ++k) {
    const double p = basis.peaks()[k];
    if (p <= fraction || p >= 1.0 - fraction) mask[k] = mask[basis.size() + k] = true;
  }
  return mask;
}

std::vector<double> LatentDecoder::decode(std::span<const double> z) const {
  if (model == nullptr) throw InvalidArgument("latent decoder has no model");
  return geometry::denormalize(diffusion::generate(*model, z, schedule, steps), box);
}

std::vector<double> LatentDecoder::pullback(std::span<const double> z, std::span<const double> delta_gradient) const {
  if (model == nullptr) throw InvalidArgument("latent decoder has no model");
  if (delta_gradient.size() != box.size()) throw InvalidArgument("gradient length does not match the box");
  std::vector<double> unit(delta_gradient.size());
  for (std::size_t i = 0; i < unit.size(); ++i) unit[i] = delta_gradient[i] * (box.hi[i] - box.lo[i]);
  return diffusion::backprop_through_sampler(*model, z, schedule, steps, unit);
}

DesignProblem::DesignProblem(DesignSetup setup) : setup_(std::move(setup)) {
  setup_.conditions.validate();
  geometry::validate(setup_.base);
  const std::size_t d = setup_.basis.design_dim();
  if (d == 0) throw InvalidArgument("design problem needs a bump basis");
  for (const auto& c : setup_.constraints) {
    if (c.bound == 0.0) throw InvalidArgument("constraint bounds must be nonzero");
  }
  if (setup_.objective.kind == flow::ObjectiveKind::target_cp && setup_.objective.target_cp.size() != setup_.n_panels) {
    throw InvalidArgument("target Cp has " + std::to_string(setup_.objective.target_cp.size()) + " entries for " +
                          std::to_string(setup_.n_panels) + " panels");
  }
  if (setup_.mode == Mode::latent) {
    if (!setup_.decoder || setup_.decoder->model == nullptr) throw InvalidArgument("latent mode requires a loaded checkpoint");
    if (setup_.decoder->model->dim() != d || setup_.decoder->box.size() != d) {
      throw InvalidArgument("checkpoint dimension does not match the bump basis");
    }
  }
  if (setup_.lower.size() != d || setup_.upper.size() != d) throw InvalidArgument("design box has the wrong length");
  chain_ = flow::ShapeChain::build(setup_.base, setup_.basis, setup_.n_panels);
  frozen_ = setup_.mode == Mode::hh_scaled ? scaled_mask(d, setup_.scaled_fraction) : std::vector<bool>(d, false);
}

std::size_t DesignProblem::dim() const { return setup_.basis.design_dim(); }

std::vector<double> DesignProblem::delta_of(std::span<const double> v) const {
  if (v.size() != dim()) throw InvalidArgument("decision vector has length " + std::to_string(v.size()));
  if (setup_.mode == Mode::latent) return setup_.decoder->decode(v);
  std::vector<double> delta(v.begin(), v.end());
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (frozen_[i]) delta[i] = 0.0;
  }
  return delta;
}

const DesignProblem::Cache& DesignProblem::solve_at(std::span<const double> v) {
  if (cache_ && std::equal(v.begin(), v.end(), cache_->v.begin(), cache_->v.end())) return *cache_;
  cache_.reset();
  ++primal_solves_;
  Cache c;
  c.v.assign(v.begin(), v.end());
  c.delta = delta_of(v);
  c.system = flow::assemble(chain_.loop(c.delta), setup_.conditions);
  c.u = flow::solve_fixed_point(c.system).u;
  cache_ = std::move(c);
  return *cache_;
}

DesignPoint DesignProblem::point(std::span<const double> v) {
  DesignPoint p;
  p.delta = delta_of(v);
  const auto deformed = geometry::deform(setup_.base, geometry::HicksHenneVector(p.delta), setup_.basis);
  p.shape = deformed.shape;
  p.self_intersecting = deformed.self_intersecting;
  p.tc = geometry::thickness_to_chord(p.shape);
  try {
    const auto& c = solve_at(v);
    p.objective = flow::objective(setup_.objective, c.system, c.u);
    const auto coeffs = flow::coefficients(c.system, c.u);
    p.cl = coeffs.cl;
    p.cm = coeffs.cm;
    p.ok = std::isfinite(p.objective) && std::isfinite(p.cl);
    if (!p.ok) p.failure = "non-finite flow output";
  } catch (const NumericalFailure& e) {
    p.failure = e.what();
  } catch (const GeometryError& e) {
    p.failure = e.what();
  }
  for (const auto& con : setup_.constraints) {
    p.constraints.push_back(con.bound - (con.quantity == Constraint::Quantity::cl ? p.cl : p.tc));
  }
  return p;
}

Evaluation DesignProblem::evaluate(std::span<const double> v) {
  const auto p = point(v);
  Evaluation e;
  e.ok = p.ok;
  e.failure = p.failure;
  e.objective = p.ok ? p.objective : std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.constraints.size(); ++i) {
    e.constraints.push_back(p.constraints[i] / std::abs(setup_.constraints[i].bound));
  }
  e.extras = {p.cl, p.tc};
  return e;
}

std::vector<std::vector<double>> DesignProblem::delta_gradients(std::span<const double> v) {
  const auto& c = solve_at(v);
  std::vector<flow::FlowFunctional> functionals{flow::FlowFunctional::of(setup_.objective)};
  bool need_lift = false;
  for (const auto& con : setup_.constraints) need_lift = need_lift || con.quantity == Constraint::Quantity::cl;
  if (need_lift) functionals.push_back(flow::FlowFunctional::lift());
  const auto adj = flow::adjoint_gradients(functionals, chain_, c.delta, c.system, c.u);

  std::vector<std::vector<double>> out{adj[0].gradient};
  for (const auto& con : setup_.constraints) {
    std::vector<double> g = con.quantity == Constraint::Quantity::cl
                                ? adj[1].gradient
                                : geometry::thickness_gradient(setup_.base, geometry::HicksHenneVector(c.delta), setup_.basis);
    // c = bound - q
    for (auto& x : g) x = -x;
    out.push_back(std::move(g));
  }
  function_gradients_ += out.size();
  return out;
}

GradientSet DesignProblem::gradient(std::span<const double> v) {
  auto raw = delta_gradients(v);
  for (auto& g : raw) {
    if (setup_.mode == Mode::latent) {
      g = setup_.decoder->pullback(v, g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (frozen_[i]) g[i] = 0.0;
      }
    }
  }
  GradientSet out;
  out.objective = std::move(raw[0]);
  for (std::size_t i = 0; i < setup_.constraints.size(); ++i) {
    auto g = std::move(raw[i + 1]);
    for (auto& x : g) x /= std::abs(setup_.constraints[i].bound);
    out.constraints.push_back(std::move(g));
  }
  return out;
}

void hh_box(const geometry::NormalizationBox& box, std::vector<double>& lower, std::vector<double>& upper) {
  box.validate();
  lower.resize(box.size());
  upper.resize(box.size());
  for (std::size_t i = 0; i < box.size(); ++i) {
    lower[i] = std::min(box.lo[i], 0.0);
    upper[i] = std::max(box.hi[i], 0.0);
  }
}

LatentInit latent_gaussian(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  LatentInit out;
  out.z.resize(d);
  for (auto& v : out.z) v = normal(rng);
  return out;
}

namespace {

class EncodeProblem : public Problem {
 public:
  EncodeProblem(const LatentDecoder& decoder, std::span<const double> target)
      : decoder_(decoder), target_(target.begin(), target.end()) {}
  std::size_t dim() const override { return target_.size(); }
  std::size_t num_constraints() const override { return 0; }
  std::vector<double> lower() const override { return std::vector<double>(dim(), -kLatentBound); }
  std::vector<double> upper() const override { return std::vector<double>(dim(), kLatentBound); }
  Evaluation evaluate(std::span<const double> z) override {
    const auto x = diffusion::generate(*decoder_.model, z, decoder_.schedule, decoder_.steps);
    Evaluation e;
    e.objective = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) e.objective += 0.5 * (x[i] - target_[i]) * (x[i] - target_[i]);
    e.ok = true;
    return e;
  }
  GradientSet gradient(std::span<const double> z) override {
    const auto x = diffusion::generate(*decoder_.model, z, decoder_.schedule, decoder_.steps);
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - target_[i];
    return {diffusion::backprop_through_sampler(*decoder_.model, z, decoder_.schedule, decoder_.steps, r), {}};
  }

 private:
  const LatentDecoder& decoder_;
  std::vector<double> target_;
};

}  // namespace

LatentInit latent_encode(const LatentDecoder& decoder, std::span<const double> target_unit, std::uint64_t seed,
                         std::size_t steps) {
  if (decoder.model == nullptr) throw InvalidArgument("latent decoder has no model");
  if (target_unit.size() != decoder.model->dim()) throw InvalidArgument("encode target has the wrong length");
  auto start = latent_gaussian(target_unit.size(), seed).z;
  for (auto& v : start) v = std::clamp(v, -kLatentBound, kLatentBound);
  EncodeProblem problem(decoder, target_unit);
  SolverConfig cfg;
  cfg.max_gradient_evals = steps;
  cfg.max_evaluations = 20 * steps;
  cfg.first_order_tol = 1e-10;
  const auto r = solve(problem, start, cfg);
  LatentInit out;
  out.z = r.x;
  out.residual_rms = std::sqrt(2.0 * r.at_x.objective / static_cast<double>(target_unit.size()));
  out.warning = out.residual_rms > 0.05;
  return out;
}

}  // namespace latentfoil::optim
