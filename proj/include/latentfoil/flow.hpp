#pragma once

// Incompressible potential-flow panel solver (Hess-Smith: constant-strength
// sources per panel plus one uniform vortex sheet) with a discrete adjoint.
//
// The state u = [q_1..q_N, gamma] satisfies A(x) u = b(x): N flow-tangency
// rows at the panel midpoints and one Kutta row equating the tangential
// speeds on the two trailing-edge panels. The primal solver is the fixed
// point u = F(u, x) = u - omega * P (A u - b), P = diag(A)^-1; the adjoint
// iteration reuses the same contraction, lambda <- dJ/du + (dF/du)^T lambda.
//
// Panels run clockwise: trailing edge along the lower surface to the leading
// edge, then along the upper surface back to the trailing edge.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "latentfoil/autodiff.hpp"
#include "latentfoil/geometry.hpp"

namespace latentfoil::flow {

struct FlowConditions {
  double alpha = 0.0;  // radians
  double v_inf = 1.0;

  void validate() const;
};

// Closed node loop, N + 1 nodes for N panels.
struct PanelLoop {
  std::vector<double> x;
  std::vector<double> y;

  std::size_t panels() const { return x.empty() ? 0 : x.size() - 1; }
};

// Resamples both surfaces to n_panels / 2 + 1 cosine points and chains them
// into a loop. n_panels must be even and >= 40.
PanelLoop panel_loop(const geometry::AirfoilShape& shape, std::size_t n_panels);

struct PanelSystem {
  PanelLoop loop;
  FlowConditions conditions;
  Eigen::MatrixXd A;  // (N+1) x (N+1)
  Eigen::VectorXd b;  // N+1
  // Tangential speed at the control points: V_t = tangential * u + tangential_free.
  Eigen::MatrixXd tangential;
  Eigen::VectorXd tangential_free;
  Eigen::VectorXd dx, dy, lengths, xm, ym;

  std::size_t panels() const { return static_cast<std::size_t>(lengths.size()); }
};

PanelSystem assemble(const geometry::AirfoilShape& shape, std::size_t n_panels, const FlowConditions& conditions);
PanelSystem assemble(const PanelLoop& loop, const FlowConditions& conditions);

// Spectral radius of P A by power iteration.
double estimate_spectral_radius(const PanelSystem& system, std::size_t iterations = 20);
// 0.8 / rho(P A).
double default_relaxation(const PanelSystem& system);

struct FixedPointOptions {
  std::optional<double> omega;  // default_relaxation() when unset
  double tol = 1e-10;
  std::size_t max_iter = 20000;
};

struct FixedPointResult {
  Eigen::VectorXd u;
  double omega = 0.0;
  std::size_t iterations = 0;
  std::vector<double> residuals;  // ||A u - b||_inf per iteration
};

// Preconditioned Richardson iteration from u = 0. Throws NonConvergence when
// the residual makes no net progress over 50 iterations or max_iter is hit.
FixedPointResult solve_fixed_point(const PanelSystem& system, const FixedPointOptions& options = {});
// Dense LU reference solve.
Eigen::VectorXd solve_direct(const PanelSystem& system);

Eigen::VectorXd cp(const PanelSystem& system, const Eigen::VectorXd& u);

struct AeroCoefficients {
  double cl = 0.0;
  double cm = 0.0;                   // about the quarter chord, nose-up positive
  double cl_kutta_joukowski = 0.0;   // 2 Gamma / (V c)
};
AeroCoefficients coefficients(const PanelSystem& system, const Eigen::VectorXd& u);
inline double cl(const PanelSystem& s, const Eigen::VectorXd& u) { return coefficients(s, u).cl; }
inline double cm(const PanelSystem& s, const Eigen::VectorXd& u) { return coefficients(s, u).cm; }

enum class ObjectiveKind { target_cp, max_cl, cm_magnitude };

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::target_cp;
  std::vector<double> target_cp;  // one value per panel for target_cp

  static ObjectiveSpec target(std::vector<double> cp_target) { return {ObjectiveKind::target_cp, std::move(cp_target)}; }
  static ObjectiveSpec max_lift() { return {ObjectiveKind::max_cl, {}}; }
  static ObjectiveSpec moment() { return {ObjectiveKind::cm_magnitude, {}}; }
};

// target_cp: 1/2 sum (Cp_i - Cp*_i)^2 ds_i; max_cl: -Cl; cm_magnitude: Cm^2 / 2.
double objective(const ObjectiveSpec& spec, const PanelSystem& system, const Eigen::VectorXd& u);

// A scalar output of the flow that can be differentiated by the adjoint.
struct FlowFunctional {
  enum class Kind { objective, lift } kind = Kind::objective;
  ObjectiveSpec spec;

  static FlowFunctional of(ObjectiveSpec s) { return {Kind::objective, std::move(s)}; }
  static FlowFunctional lift() { return {Kind::lift, {}}; }
};

double evaluate_functional(const FlowFunctional& f, const PanelSystem& system, const Eigen::VectorXd& u);

// Linear map from Hicks-Henne coefficients to loop node ordinates:
// y_nodes = y_base + basis * delta, abscissae fixed.
struct ShapeChain {
  Eigen::VectorXd x_nodes;
  Eigen::VectorXd y_base;
  Eigen::MatrixXd basis;  // (N+1) x d

  static ShapeChain build(const geometry::AirfoilShape& base, const geometry::BumpBasis& bumps, std::size_t n_panels);
  std::size_t design_dim() const { return static_cast<std::size_t>(basis.cols()); }
  PanelLoop loop(std::span<const double> delta) const;
};

struct AdjointState {
  Eigen::VectorXd lambda;
  std::size_t iterations = 0;
  std::vector<double> residuals;  // ||lambda_{k+1} - lambda_k||_inf
};

struct AdjointOptions {
  double tol = 1e-13;
  std::size_t max_iter = 50000;
};

struct AdjointGradient {
  std::vector<double> gradient;  // dJ/d(delta)
  double value = 0.0;
  AdjointState state;
};

// One adjoint fixed-point solve per functional against a converged primal u
// of `system`, which must have been assembled from chain.loop(delta).
std::vector<AdjointGradient> adjoint_gradients(std::span<const FlowFunctional> functionals, const ShapeChain& chain,
                                               std::span<const double> delta, const PanelSystem& system,
                                               const Eigen::VectorXd& u, const AdjointOptions& options = {});
AdjointGradient adjoint_gradient(const FlowFunctional& functional, const ShapeChain& chain,
                                 std::span<const double> delta, const PanelSystem& system, const Eigen::VectorXd& u,
                                 const AdjointOptions& options = {});

// Reference adjoint from the transposed linear system (omega P A)^T lambda = dJ/du^T.
Eigen::VectorXd solve_adjoint_direct(const PanelSystem& system, double omega, const Eigen::VectorXd& dj_du);

// ---- taped building blocks ----------------------------------------------

struct TapedPanelModel {
  ad::Var A, b, tangential, tangential_free, dx, dy, lengths, xm, ym;
  std::size_t panels = 0;
};

TapedPanelModel record_panel_model(ad::Var x_nodes, ad::Var y_nodes, const FlowConditions& conditions);
ad::Var record_cp(const TapedPanelModel& model, ad::Var u, const FlowConditions& conditions);
ad::Var record_cl(const TapedPanelModel& model, ad::Var cp, const FlowConditions& conditions);
ad::Var record_cm(const TapedPanelModel& model, ad::Var cp);
ad::Var record_functional(const FlowFunctional& f, const TapedPanelModel& model, ad::Var u,
                          const FlowConditions& conditions);
// F(u, x) = u - omega * diag(A)^-1 (A u - b).
ad::Var record_fixed_point_operator(const TapedPanelModel& model, ad::Var u, double omega);

}  // namespace latentfoil::flow
