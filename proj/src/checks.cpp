#include "latentfoil/checks.hpp"

#include <algorithm>
#include <numbers>
#include <random>

#include "latentfoil/design.hpp"
#include "latentfoil/flow.hpp"

namespace latentfoil::checks {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::vector<double> gaussian(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

}  // namespace

std::vector<gradcheck::Row> flow_adjoint(std::size_t n_panels, std::uint64_t seed) {
  const auto base = geometry::naca4("0012");
  const auto chain = flow::ShapeChain::build(base, geometry::bump_basis(), n_panels);
  const flow::FlowConditions cond{3.0 * kDeg, 1.0};

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(-0.01, 0.01);
  std::vector<double> perturbed(chain.design_dim());
  for (auto& v : perturbed) v = u01(rng);
  const auto target_sys = flow::assemble(chain.loop(perturbed), cond);
  const auto target = flow::cp(target_sys, flow::solve_direct(target_sys));
  const auto f = flow::FlowFunctional::of(flow::ObjectiveSpec::target({target.data(), target.data() + target.size()}));

  const std::vector<double> zero(chain.design_dim(), 0.0);
  const auto sys = flow::assemble(chain.loop(zero), cond);
  const auto u = flow::solve_fixed_point(sys).u;
  const auto g = flow::adjoint_gradient(f, chain, zero, sys, u);

  ad::Tape tape;
  const auto model = flow::record_panel_model(tape.constant(ad::Tensor::vector(sys.loop.x)),
                                              tape.constant(ad::Tensor::vector(sys.loop.y)), cond);
  const auto uv = tape.variable(ad::Tensor::vector({u.data(), u.data() + u.size()}));
  const auto grads = tape.backward(flow::record_functional(f, model, uv, cond));
  const auto& dj = grads[uv].data;
  const auto direct = flow::solve_adjoint_direct(sys, flow::default_relaxation(sys),
                                                 Eigen::Map<const Eigen::VectorXd>(dj.data(), u.size()));
  gradcheck::Row lambda{"flow adjoint lambda vs transposed solve (abs)",
                        (g.state.lambda - direct).lpNorm<Eigen::Infinity>(), 1e-8, 1};

  const auto fd = gradcheck::central_difference(
      [&](std::span<const double> d) {
        const auto s = flow::assemble(chain.loop(d), cond);
        return flow::evaluate_functional(f, s, flow::solve_direct(s));
      },
      zero);
  gradcheck::Row gradient{"flow adjoint dJ/ddelta, target Cp (componentwise)",
                          gradcheck::componentwise_relative_error(g.gradient, fd), 1e-5, 1};
  return {lambda, gradient};
}

gradcheck::Row sampler_vjp(const nn::NoisePredictor& model, const diffusion::NoiseSchedule& schedule, std::size_t steps,
                           std::size_t pairs, std::uint64_t seed, double tolerance) {
  const auto list = diffusion::strided_steps(schedule.T, static_cast<int>(steps));
  std::mt19937_64 rng(seed);
  gradcheck::Row row{"sampler VJP, " + std::to_string(steps) + " steps", 0.0, tolerance, pairs};
  for (std::size_t k = 0; k < pairs; ++k) {
    const auto z = gaussian(model.dim(), rng);
    const auto xbar = gaussian(model.dim(), rng);
    const auto analytic = diffusion::backprop_through_sampler(model, z, schedule, list, xbar);
    const auto fd = gradcheck::central_difference(
        [&](std::span<const double> zz) {
          const auto x = diffusion::generate(model, zz, schedule, list);
          double s = 0.0;
          for (std::size_t i = 0; i < x.size(); ++i) s += xbar[i] * x[i];
          return s;
        },
        z);
    row.max_rel_error = std::max(row.max_rel_error, gradcheck::relative_error(analytic, fd));
  }
  return row;
}

gradcheck::Row chain_gradient(const nn::NoisePredictor& model, const diffusion::NoiseSchedule& schedule,
                              const geometry::NormalizationBox& box, std::size_t steps, std::size_t trials,
                              std::uint64_t seed, double tolerance) {
  constexpr std::size_t kPanels = 160;
  const flow::FlowConditions cond{2.31 * kDeg, 1.0};
  const auto target_sys = flow::assemble(geometry::naca4("0009"), kPanels, cond);
  const auto target = flow::cp(target_sys, flow::solve_direct(target_sys));
  const auto spec = flow::ObjectiveSpec::target({target.data(), target.data() + target.size()});

  optim::DesignSetup setup;
  setup.objective = spec;
  setup.conditions = cond;
  setup.mode = optim::Mode::latent;
  setup.n_panels = kPanels;
  setup.base = geometry::naca4("0012");
  setup.basis = geometry::bump_basis(model.dim());
  setup.lower.assign(model.dim(), -optim::kLatentBound);
  setup.upper.assign(model.dim(), optim::kLatentBound);
  setup.decoder = optim::LatentDecoder{&model, schedule, diffusion::strided_steps(schedule.T, static_cast<int>(steps)), box};
  optim::DesignProblem problem(setup);
  const auto chain = flow::ShapeChain::build(setup.base, setup.basis, kPanels);

  std::mt19937_64 rng(seed);
  gradcheck::Row row{"end-to-end dJ/dz, target Cp, " + std::to_string(steps) + " steps", 0.0, tolerance, trials};
  for (std::size_t k = 0; k < trials; ++k) {
    const auto z = gaussian(model.dim(), rng);
    const auto analytic = problem.gradient(z).objective;
    const auto fd = gradcheck::central_difference(
        [&](std::span<const double> zz) {
          const auto s = flow::assemble(chain.loop(problem.delta_of(zz)), cond);
          return flow::objective(spec, s, flow::solve_direct(s));
        },
        z);
    row.max_rel_error = std::max(row.max_rel_error, gradcheck::relative_error(analytic, fd));
  }
  return row;
}

}  // namespace latentfoil::checks
