#include <cmath>
#include <numbers>
#include <random>

#include <doctest.h>

#include <Eigen/SVD>

#include "latentfoil/errors.hpp"
#include "latentfoil/flow.hpp"
#include "latentfoil/geometry.hpp"
#include "latentfoil/gradcheck.hpp"

using namespace latentfoil;
using namespace latentfoil::flow;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Eigen::VectorXd solved(const PanelSystem& s) { return solve_fixed_point(s).u; }

struct ChainProblem {
  geometry::AirfoilShape base = geometry::naca4("0012");
  geometry::BumpBasis basis = geometry::bump_basis(40);
  std::size_t panels = 160;
  ShapeChain chain = ShapeChain::build(base, basis, panels);
  FlowConditions cond{3.0 * kDeg, 1.0};

  double value(const FlowFunctional& f, std::span<const double> delta) const {
    const auto sys = assemble(chain.loop(delta), cond);
    return evaluate_functional(f, sys, solve_direct(sys));
  }
};

std::vector<double> random_delta(std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> d(40);
  for (auto& v : d) v = u(rng);
  return d;
}

}  // namespace

TEST_CASE("flat plate at zero incidence has no singularity strength") {
  const auto s = assemble(geometry::naca4("0000"), 60, {0.0, 1.0});
  CHECK(s.b.lpNorm<Eigen::Infinity>() < 1e-15);
  const auto r = solve_fixed_point(s);
  CHECK(r.iterations == 0);
  CHECK(r.u.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("system shape and symmetric section at zero incidence") {
  const auto s = assemble(geometry::naca4("0012"), 100, {0.0, 1.0});
  CHECK(s.A.rows() == 101);
  CHECK(s.A.cols() == 101);
  CHECK(s.b.size() == 101);
  const auto u = solve_direct(s);
  CHECK(std::abs(u[100]) < 1e-10);
  CHECK(std::abs(cl(s, u)) < 1e-6);
  CHECK(std::abs(objective(ObjectiveSpec::max_lift(), s, u)) < 1e-6);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(s.A);
  const double cond = svd.singularValues()(0) / svd.singularValues()(100);
  MESSAGE("NACA0012/100 panels condition number " << cond);
  CHECK(std::isfinite(cond));
  CHECK(cond < 1e4);
}

TEST_CASE("fixed point agrees with the direct solve") {
  const auto s = assemble(geometry::naca4("2412"), 100, {4.0 * kDeg, 1.0});
  const auto fp = solve_fixed_point(s);
  CHECK((s.A * fp.u - s.b).lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK((fp.u - solve_direct(s)).lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK(fp.omega > 0.0);
  CHECK(fp.residuals.size() == fp.iterations + 1);

  const auto s0 = assemble(geometry::naca4("0012"), 100, {5.0 * kDeg, 1.0});
  CHECK((solve_fixed_point(s0).u - solve_direct(s0)).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("zero relaxation makes no progress") {
  const auto s = assemble(geometry::naca4("0012"), 60, {2.0 * kDeg, 1.0});
  FixedPointOptions opt;
  opt.omega = 0.0;
  try {
    solve_fixed_point(s, opt);
    FAIL("expected non-convergence");
  } catch (const NonConvergence& e) {
    CHECK(e.history().size() > 50);
  }
}

TEST_CASE("overrelaxation beyond the contraction limit diverges") {
  const auto s = assemble(geometry::naca4("0012"), 60, {2.0 * kDeg, 1.0});
  FixedPointOptions opt;
  opt.omega = 4.0 / estimate_spectral_radius(s);
  CHECK_THROWS_AS(solve_fixed_point(s, opt), NonConvergence);
}

TEST_CASE("preconditions") {
  CHECK_THROWS_AS(assemble(geometry::naca4("0012"), 30, {0.0, 1.0}), InvalidArgument);
  CHECK_THROWS_AS(assemble(geometry::naca4("0012"), 61, {0.0, 1.0}), InvalidArgument);
  CHECK_THROWS_AS(assemble(geometry::naca4("0012"), 60, {1.0, 1.0}), InvalidArgument);
  PanelLoop loop = panel_loop(geometry::naca4("0012"), 40);
  loop.x[7] = loop.x[6];
  loop.y[7] = loop.y[6];
  try {
    assemble(loop, {0.0, 1.0});
    FAIL("expected a geometry error");
  } catch (const GeometryError& e) {
    CHECK(e.index() == 6);
  }
}

TEST_CASE("lift against thin-airfoil theory and circulation") {
  const auto s = assemble(geometry::naca4("0012"), 200, {5.0 * kDeg, 1.0});
  const auto c = coefficients(s, solved(s));
  const double thin = 2.0 * std::numbers::pi * std::sin(5.0 * kDeg);
  MESSAGE("Cl " << c.cl << " Kutta-Joukowski " << c.cl_kutta_joukowski << " thin airfoil " << thin);
  CHECK(std::abs(c.cl - c.cl_kutta_joukowski) / std::abs(c.cl_kutta_joukowski) < 0.02);
  // A 12% section carries about 10% more lift than the flat-plate value.
  CHECK(c.cl > thin);
  CHECK(c.cl < 1.12 * thin);

  const auto coarse = assemble(geometry::naca4("0012"), 100, {5.0 * kDeg, 1.0});
  const auto fine = assemble(geometry::naca4("0012"), 400, {5.0 * kDeg, 1.0});
  CHECK(std::abs(cl(coarse, solved(coarse)) - cl(fine, solved(fine))) / cl(fine, solved(fine)) < 0.02);
}

TEST_CASE("cambered section pitches nose down") {
  const auto s = assemble(geometry::naca4("2412"), 200, {0.0, 1.0});
  const auto c = coefficients(s, solved(s));
  // Thin-airfoil theory gives Cl ~ 0.23 and Cm_c/4 ~ -0.053 for this camber line.
  CHECK(c.cl > 0.2);
  CHECK(c.cm < -0.04);
  CHECK(c.cm > -0.07);
}

TEST_CASE("objectives") {
  const auto s = assemble(geometry::naca4("2412"), 120, {3.0 * kDeg, 1.0});
  const auto u = solved(s);
  const auto own = cp(s, u);
  CHECK(objective(ObjectiveSpec::target(std::vector<double>(own.data(), own.data() + own.size())), s, u) == 0.0);
  CHECK(objective(ObjectiveSpec::max_lift(), s, u) == doctest::Approx(-cl(s, u)));
  CHECK(objective(ObjectiveSpec::moment(), s, u) == doctest::Approx(0.5 * cm(s, u) * cm(s, u)));
  CHECK_THROWS_AS(objective(ObjectiveSpec::target({1.0, 2.0}), s, u), InvalidArgument);

  for (auto spec : {ObjectiveSpec::max_lift(), ObjectiveSpec::moment()}) {
    const auto a = assemble(geometry::naca4("2412"), 200, {3.0 * kDeg, 1.0});
    const auto b = assemble(geometry::naca4("2412"), 400, {3.0 * kDeg, 1.0});
    const double ja = objective(spec, a, solved(a));
    const double jb = objective(spec, b, solved(b));
    INFO("200 panels " << ja << ", 400 panels " << jb);
    CHECK(std::abs(ja - jb) / std::abs(jb) < 0.02);
  }
}

TEST_CASE("adjoint gradient matches finite differences on every component") {
  ChainProblem p;
  const std::vector<double> zero(40, 0.0);
  const auto target_sys = assemble(p.chain.loop(random_delta(3, 0.01)), p.cond);
  const auto target_cp = cp(target_sys, solve_direct(target_sys));
  const auto f = FlowFunctional::of(ObjectiveSpec::target({target_cp.data(), target_cp.data() + target_cp.size()}));

  const auto sys = assemble(p.chain.loop(zero), p.cond);
  const auto u = solve_fixed_point(sys).u;
  const auto g = adjoint_gradient(f, p.chain, zero, sys, u);
  CHECK(g.value == doctest::Approx(evaluate_functional(f, sys, u)).epsilon(1e-12));

  const auto fd = gradcheck::central_difference([&](std::span<const double> d) { return p.value(f, d); }, zero);
  const double err = gradcheck::componentwise_relative_error(g.gradient, fd);
  MESSAGE("target Cp adjoint: componentwise rel error " << err << ", adjoint iterations " << g.state.iterations);
  CHECK(err < 1e-5);

  const double omega = default_relaxation(sys);
  // Reference adjoint built from dJ/du of the independent objective.
  const auto dj_du = gradcheck::central_difference(
      [&](std::span<const double> uu) {
        return evaluate_functional(f, sys, Eigen::Map<const Eigen::VectorXd>(uu.data(), u.size()));
      },
      std::span<const double>(u.data(), u.size()));
  const auto direct = solve_adjoint_direct(sys, omega, Eigen::Map<const Eigen::VectorXd>(dj_du.data(), u.size()));
  CHECK((g.state.lambda - direct).lpNorm<Eigen::Infinity>() < 1e-6);
  const auto exact_direct = solve_adjoint_direct(
      sys, omega, [&] {
        ad::Tape tape;
        auto xs = tape.constant(ad::Tensor::vector(sys.loop.x));
        auto ys = tape.constant(ad::Tensor::vector(sys.loop.y));
        auto model = record_panel_model(xs, ys, p.cond);
        auto uv = tape.variable(ad::Tensor::vector({u.data(), u.data() + u.size()}));
        auto gj = tape.backward(record_functional(f, model, uv, p.cond))[uv];
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(gj.data.data(), u.size()));
      }());
  CHECK((g.state.lambda - exact_direct).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("lift and moment gradients and the duality of directional derivatives") {
  ChainProblem p;
  const auto delta = random_delta(9, 0.005);
  const auto sys = assemble(p.chain.loop(delta), p.cond);
  const auto u = solve_fixed_point(sys).u;
  const std::vector<FlowFunctional> fs{FlowFunctional::lift(), FlowFunctional::of(ObjectiveSpec::moment()),
                                       FlowFunctional::of(ObjectiveSpec::max_lift())};
  const auto gs = adjoint_gradients(fs, p.chain, delta, sys, u);
  REQUIRE(gs.size() == 3);
  for (std::size_t i = 0; i < 40; ++i) CHECK(gs[0].gradient[i] == doctest::Approx(-gs[2].gradient[i]).epsilon(1e-12));

  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  for (std::size_t k = 0; k < fs.size(); ++k) {
    for (int trial = 0; trial < 3; ++trial) {
      std::vector<double> v(40);
      for (auto& x : v) x = n(rng);
      double analytic = 0.0;
      for (std::size_t i = 0; i < 40; ++i) analytic += gs[k].gradient[i] * v[i];
      const double h = 1e-6;
      std::vector<double> up = delta, down = delta;
      for (std::size_t i = 0; i < 40; ++i) {
        up[i] += h * v[i];
        down[i] -= h * v[i];
      }
      const double numeric = (p.value(fs[k], up) - p.value(fs[k], down)) / (2 * h);
      CHECK(std::abs(analytic - numeric) / std::abs(numeric) < 1e-5);
    }
  }
}

TEST_CASE("mirrored bumps on a symmetric section") {
  ChainProblem p;
  p.cond.alpha = 0.0;
  const std::vector<double> zero(40, 0.0);
  const auto sys = assemble(p.chain.loop(zero), p.cond);
  const auto u = solve_fixed_point(sys).u;
  const std::vector<FlowFunctional> fs{FlowFunctional::of(ObjectiveSpec::moment()), FlowFunctional::lift()};
  const auto gs = adjoint_gradients(fs, p.chain, zero, sys, u);
  for (std::size_t k = 0; k < 20; ++k) {
    // An even functional pairs antisymmetrically, an odd one symmetrically.
    CHECK(std::abs(gs[0].gradient[k] + gs[0].gradient[20 + k]) < 1e-8);
    CHECK(std::abs(gs[1].gradient[k] - gs[1].gradient[20 + k]) < 1e-8);
  }
  CHECK(std::abs(gs[1].gradient[5]) > 1e-3);
}

TEST_CASE("thickness gradient through the geometry chain") {
  const auto base = geometry::naca4("0012");
  const auto basis = geometry::bump_basis(40);
  const auto delta = random_delta(21, 0.004);
  const auto g = geometry::thickness_gradient(base, geometry::HicksHenneVector(delta), basis);
  const auto fd = gradcheck::central_difference(
      [&](std::span<const double> d) {
        return geometry::thickness_to_chord(
            geometry::deform(base, geometry::HicksHenneVector({d.begin(), d.end()}), basis).shape);
      },
      delta);
  for (std::size_t i = 0; i < 40; ++i) CHECK(std::abs(g[i] - fd[i]) < 1e-7);
}
