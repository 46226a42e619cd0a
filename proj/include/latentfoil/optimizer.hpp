#pragma once

// Augmented Lagrangian solver for
//     min f(v)  s.t.  c_i(v) <= 0,  lo <= v <= hi,  v_k fixed for frozen k,
// with a projected limited-memory BFGS inner loop.
//
// The PHR augmented Lagrangian is
//     L(v) = f(v) + 1/(2 rho) sum_i ( max(0, mu_i + rho c_i)^2 - mu_i^2 ),
// multipliers are updated as mu_i <- max(0, mu_i + rho c_i) after each inner
// solve and rho doubles whenever the maximum violation fails to halve.
// Converged means max violation <= eps_rel_tol, and both the projected
// Lagrangian gradient and the last multiplier update are <= first_order_tol.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace latentfoil::optim {

struct Evaluation {
  double objective = std::numeric_limits<double>::infinity();
  std::vector<double> constraints;  // c_i <= 0 is feasible
  bool ok = false;                  // false: rejected point, objective is the +inf sentinel
  std::string failure;
  std::vector<double> extras;       // problem-specific diagnostics carried into the log
};

struct GradientSet {
  std::vector<double> objective;
  std::vector<std::vector<double>> constraints;
};

class Problem {
 public:
  virtual ~Problem() = default;
  virtual std::size_t dim() const = 0;
  virtual std::size_t num_constraints() const = 0;
  virtual std::vector<double> lower() const = 0;
  virtual std::vector<double> upper() const = 0;
  // Components held at their initial value. Empty means none.
  virtual std::vector<bool> frozen() const { return {}; }
  virtual Evaluation evaluate(std::span<const double> v) = 0;
  // Only called at points where evaluate() succeeded.
  virtual GradientSet gradient(std::span<const double> v) = 0;
};

struct SolverConfig {
  std::size_t max_gradient_evals = 100;
  std::size_t max_evaluations = 1000;
  std::size_t memory = 10;
  double eps_rel_tol = 2e-3;
  double first_order_tol = 1e-6;
  double rho0 = 10.0;
  double armijo = 1e-4;
  std::size_t max_backtracks = 30;

  void validate() const;
};

struct IterateLog {
  std::size_t iterate = 0;
  std::size_t outer = 0;
  double objective = 0.0;
  std::vector<double> constraints;
  std::vector<double> extras;
  double eps_rel = 0.0;
  std::size_t evaluations = 0;
  std::size_t gradients = 0;
  double step_norm = 0.0;
};

struct OuterLog {
  std::size_t outer = 0;
  double max_violation = 0.0;
  double rho = 0.0;
  bool accepted = false;
};

enum class Termination { converged, budget_exhausted, stalled };
std::string to_string(Termination t);

struct OptimResult {
  std::vector<double> x;
  Evaluation at_x;
  std::vector<double> multipliers;
  double eps_rel = 0.0;
  double first_order = 0.0;  // projected gradient norm of the Lagrangian at x
  // Last multiplier update, max_i |mu_i' - mu_i|; rho |c_i| on active constraints.
  double multiplier_change = 0.0;
  std::size_t evaluations = 0;  // #J
  std::size_t gradients = 0;    // #grad J
  Termination termination = Termination::stalled;
  bool converged() const { return termination == Termination::converged; }
  std::vector<IterateLog> log;
  std::vector<OuterLog> outer;
};

// max(0, max_i c_i) for constraints already scaled to relative form.
double max_violation(std::span<const double> constraints);

// Projected gradient: components that would leave the box, and frozen ones, are zeroed.
std::vector<double> projected_gradient(std::span<const double> x, std::span<const double> g,
                                       std::span<const double> lo, std::span<const double> hi,
                                       const std::vector<bool>& frozen);

OptimResult solve(Problem& problem, std::span<const double> v0, const SolverConfig& config = {},
                  const std::function<void(const IterateLog&)>& on_iterate = {});

}  // namespace latentfoil::optim
