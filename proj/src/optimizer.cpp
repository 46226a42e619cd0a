#include "latentfoil/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "latentfoil/errors.hpp"

namespace latentfoil::optim {

namespace {

constexpr std::size_t kMaxOuter = 200;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

struct Pair {
  std::vector<double> s, y;
  double rho;
};

// H g by the two-loop recursion with the usual s'y / y'y initial scaling.
std::vector<double> two_loop(const std::deque<Pair>& memory, std::vector<double> q) {
  std::vector<double> alpha(memory.size());
  for (std::size_t k = memory.size(); k-- > 0;) {
    alpha[k] = memory[k].rho * dot(memory[k].s, q);
    for (std::size_t i = 0; i < q.size(); ++i) q[i] -= alpha[k] * memory[k].y[i];
  }
  if (!memory.empty()) {
    const auto& last = memory.back();
    const double gamma = dot(last.s, last.y) / dot(last.y, last.y);
    for (auto& v : q) v *= gamma;
  }
  for (std::size_t k = 0; k < memory.size(); ++k) {
    const double beta = memory[k].rho * dot(memory[k].y, q);
    for (std::size_t i = 0; i < q.size(); ++i) q[i] += (alpha[k] - beta) * memory[k].s[i];
  }
  return q;
}

}  // namespace

void SolverConfig::validate() const {
  if (max_gradient_evals == 0 || max_evaluations == 0 || memory == 0 || max_backtracks == 0) {
    throw InvalidArgument("solver budgets and memory must be positive");
  }
  if (!(eps_rel_tol >= 0.0 && first_order_tol > 0.0 && rho0 > 0.0 && armijo > 0.0 && armijo < 1.0)) {
    throw InvalidArgument("solver tolerances must be positive and the Armijo constant in (0, 1)");
  }
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::budget_exhausted: return "budget_exhausted";
    case Termination::stalled: return "stalled";
  }
  return "unknown";
}

double max_violation(std::span<const double> constraints) {
  double v = 0.0;
  for (double c : constraints) v = std::max(v, c);
  return v;
}

std::vector<double> projected_gradient(std::span<const double> x, std::span<const double> g,
                                       std::span<const double> lo, std::span<const double> hi,
                                       const std::vector<bool>& frozen) {
  std::vector<double> pg(g.begin(), g.end());
  for (std::size_t i = 0; i < pg.size(); ++i) {
    if ((!frozen.empty() && frozen[i]) || (x[i] <= lo[i] && pg[i] > 0.0) || (x[i] >= hi[i] && pg[i] < 0.0)) pg[i] = 0.0;
  }
  return pg;
}

OptimResult solve(Problem& problem, std::span<const double> v0, const SolverConfig& config,
                  const std::function<void(const IterateLog&)>& on_iterate) {
  config.validate();
  const std::size_t n = problem.dim(), m = problem.num_constraints();
  if (v0.size() != n) throw InvalidArgument("initial vector has the wrong length");
  const auto lo = problem.lower(), hi = problem.upper();
  auto frozen = problem.frozen();
  if (frozen.empty()) frozen.assign(n, false);
  if (lo.size() != n || hi.size() != n || frozen.size() != n) throw InvalidArgument("problem bounds have the wrong length");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(lo[i] <= hi[i])) throw InvalidArgument("empty box at component " + std::to_string(i));
  }

  auto project = [&](std::vector<double> v) {
    for (std::size_t i = 0; i < n; ++i) v[i] = frozen[i] ? v0[i] : std::clamp(v[i], lo[i], hi[i]);
    return v;
  };

  OptimResult r;
  auto evaluate = [&](const std::vector<double>& v) {
    ++r.evaluations;
    Evaluation e = problem.evaluate(v);
    if (e.ok && e.constraints.size() != m) throw InvalidArgument("problem returned the wrong number of constraints");
    bool finite = std::isfinite(e.objective);
    for (double c : e.constraints) finite = finite && std::isfinite(c);
    if (!e.ok || !finite) {
      e.ok = false;
      e.objective = std::numeric_limits<double>::infinity();
      if (e.failure.empty()) e.failure = "non-finite function value";
    }
    return e;
  };
  auto gradient = [&](const std::vector<double>& v) {
    ++r.gradients;
    GradientSet g = problem.gradient(v);
    if (g.objective.size() != n || g.constraints.size() != m) throw InvalidArgument("problem returned malformed gradients");
    auto clean = [&](std::vector<double>& gi) {
      for (std::size_t i = 0; i < n; ++i) {
        if (frozen[i]) gi[i] = 0.0;
      }
    };
    clean(g.objective);
    for (auto& gc : g.constraints) clean(gc);
    return g;
  };

  std::vector<double> mu(m, 0.0);
  double rho = config.rho0;
  auto augmented = [&](const Evaluation& e) {
    if (!e.ok) return std::numeric_limits<double>::infinity();
    double f = e.objective;
    for (std::size_t i = 0; i < m; ++i) {
      const double t = std::max(0.0, mu[i] + rho * e.constraints[i]);
      f += (t * t - mu[i] * mu[i]) / (2.0 * rho);
    }
    return f;
  };
  auto augmented_gradient = [&](const Evaluation& e, const GradientSet& g) {
    auto out = g.objective;
    for (std::size_t i = 0; i < m; ++i) {
      const double t = std::max(0.0, mu[i] + rho * e.constraints[i]);
      for (std::size_t k = 0; k < n; ++k) out[k] += t * g.constraints[i][k];
    }
    return out;
  };

  std::vector<double> x = project({v0.begin(), v0.end()});
  Evaluation ex = evaluate(x);
  if (!ex.ok) throw NumericalFailure("initial point rejected: " + ex.failure);
  GradientSet gx = gradient(x);

  std::vector<double> best_x;
  Evaluation best_e;
  auto consider = [&](const std::vector<double>& v, const Evaluation& e) {
    if (e.ok && max_violation(e.constraints) <= config.eps_rel_tol && (best_x.empty() || e.objective < best_e.objective)) {
      best_x = v;
      best_e = e;
    }
  };
  std::size_t iterate = 0;
  auto log = [&](std::size_t outer, double step) {
    IterateLog entry{iterate++, outer, ex.objective, ex.constraints, ex.extras, max_violation(ex.constraints),
                     r.evaluations, r.gradients, step};
    if (on_iterate) on_iterate(entry);
    r.log.push_back(std::move(entry));
  };
  consider(x, ex);
  log(0, 0.0);

  double inner_tol = std::max(config.first_order_tol,
                              0.1 * norm(projected_gradient(x, augmented_gradient(ex, gx), lo, hi, frozen)));
  double previous_violation = max_violation(ex.constraints);
  double accepted_violation = previous_violation;
  std::deque<Pair> memory;
  bool out_of_budget = false;
  std::size_t idle_outers = 0;

  for (std::size_t outer = 1;; ++outer) {
    double f = augmented(ex);
    auto gl = augmented_gradient(ex, gx);
    std::size_t steps = 0;
    bool stalled = false;

    while (true) {
      const auto pg = projected_gradient(x, gl, lo, hi, frozen);
      if (norm(pg) <= inner_tol) break;
      if (r.gradients >= config.max_gradient_evals || r.evaluations >= config.max_evaluations) {
        out_of_budget = true;
        break;
      }
      std::vector<double> d = two_loop(memory, pg);
      for (std::size_t i = 0; i < n; ++i) d[i] = pg[i] == 0.0 ? 0.0 : -d[i];
      if (dot(gl, d) >= 0.0) {
        memory.clear();
        for (std::size_t i = 0; i < n; ++i) d[i] = -pg[i];
      }

      bool accepted = false;
      bool have_gradient = false;
      std::vector<double> xt;
      Evaluation et;
      GradientSet gt;
      double ft = 0.0;
      while (!accepted) {
        double alpha = memory.empty() ? std::min(1.0, 1.0 / norm(pg)) : 1.0;
        for (std::size_t k = 0; k < config.max_backtracks && r.evaluations < config.max_evaluations; ++k, alpha *= 0.5) {
          std::vector<double> trial(n);
          for (std::size_t i = 0; i < n; ++i) trial[i] = x[i] + alpha * d[i];
          xt = project(std::move(trial));
          std::vector<double> s(n);
          for (std::size_t i = 0; i < n; ++i) s[i] = xt[i] - x[i];
          if (norm(s) == 0.0) break;
          et = evaluate(xt);
          ft = augmented(et);
          if (ft > f + config.armijo * dot(gl, s)) {
            consider(xt, et);
            continue;
          }
          if (r.gradients < config.max_gradient_evals) {
            // An adjoint that fails to converge rejects the step like a failed primal solve.
            try {
              gt = gradient(xt);
            } catch (const NonConvergence&) {
              continue;
            }
            have_gradient = true;
          }
          consider(xt, et);
          accepted = true;
          break;
        }
        if (accepted || memory.empty()) break;
        // Quasi-Newton direction failed; retry once along the projected gradient.
        memory.clear();
        for (std::size_t i = 0; i < n; ++i) d[i] = -pg[i];
      }
      if (!accepted) {
        stalled = true;
        break;
      }

      std::vector<double> s(n);
      for (std::size_t i = 0; i < n; ++i) s[i] = xt[i] - x[i];
      x = std::move(xt);
      ex = std::move(et);
      ++steps;
      if (!have_gradient) {
        log(outer, norm(s));
        out_of_budget = true;
        break;
      }
      gx = std::move(gt);
      const auto gl_new = augmented_gradient(ex, gx);
      std::vector<double> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = gl_new[i] - gl[i];
      const double sy = dot(s, y);
      if (sy > 1e-12 * norm(s) * norm(y)) {
        memory.push_back({s, y, 1.0 / sy});
        if (memory.size() > config.memory) memory.pop_front();
      }
      f = ft;
      gl = gl_new;
      log(outer, norm(s));
    }

    // Multiplier and penalty update.
    const double violation = max_violation(ex.constraints);
    const auto mu_before = mu;
    const double rho_before = rho;
    for (std::size_t i = 0; i < m; ++i) mu[i] = std::max(0.0, mu[i] + rho * ex.constraints[i]);
    if (violation > 0.0 && violation > 0.5 * previous_violation) rho *= 2.0;
    previous_violation = violation;
    const bool accepted_outer = violation <= accepted_violation;
    if (accepted_outer) accepted_violation = violation;
    r.outer.push_back({outer, violation, rho_before, accepted_outer});
    if (mu != mu_before || rho != rho_before) memory.clear();

    if (out_of_budget) {
      r.termination = Termination::budget_exhausted;
      break;
    }
    auto lagrangian = gx.objective;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < n; ++k) lagrangian[k] += mu[i] * gx.constraints[i][k];
    }
    r.first_order = norm(projected_gradient(x, lagrangian, lo, hi, frozen));
    r.multiplier_change = 0.0;
    for (std::size_t i = 0; i < m; ++i) r.multiplier_change = std::max(r.multiplier_change, std::abs(mu[i] - mu_before[i]));
    if (violation <= config.eps_rel_tol && r.first_order <= config.first_order_tol &&
        r.multiplier_change <= config.first_order_tol) {
      r.termination = Termination::converged;
      break;
    }
    idle_outers = (steps == 0 && stalled) ? idle_outers + 1 : 0;
    if (idle_outers >= 3 || outer >= kMaxOuter) {
      r.termination = Termination::stalled;
      break;
    }
    inner_tol = std::max(config.first_order_tol, 0.1 * inner_tol);
  }

  r.multipliers = mu;
  if (r.converged() || best_x.empty() || max_violation(ex.constraints) <= config.eps_rel_tol) {
    if (!r.converged() && !best_x.empty() && best_e.objective < ex.objective) {
      r.x = best_x;
      r.at_x = best_e;
    } else {
      r.x = x;
      r.at_x = ex;
    }
  } else {
    r.x = best_x;
    r.at_x = best_e;
  }
  r.eps_rel = max_violation(r.at_x.constraints);
  return r;
}

}  // namespace latentfoil::optim
