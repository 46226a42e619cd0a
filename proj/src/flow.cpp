#include "latentfoil/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "latentfoil/errors.hpp"

namespace latentfoil::flow {

using ad::Axis;
using ad::Broadcast;
using ad::Shape;
using ad::Tensor;
using ad::Var;

namespace {

constexpr double kMinPanelLength = 1e-12;
constexpr std::size_t kProgressWindow = 50;

Tensor to_tensor(const Eigen::VectorXd& v) { return Tensor::vector(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd to_eigen(const Tensor& t) {
  return Eigen::Map<const Eigen::VectorXd>(t.data.data(), static_cast<Eigen::Index>(t.size()));
}

Eigen::MatrixXd to_eigen_matrix(const Tensor& t) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(t.data.data(), static_cast<Eigen::Index>(t.shape.rows),
                                    static_cast<Eigen::Index>(t.shape.cols));
}

Var row_of(Var m, std::size_t row, std::size_t cols) { return slice(m, row * cols, Shape::matrix(1, cols)); }

Var as_column(Var v) { return reshape(v, Shape::matrix(v.value().size(), 1)); }

// Node pressure at interior nodes averages the adjacent panels; both trailing
// edge nodes take the mean of the two trailing-edge panels. Each panel then
// integrates the trapezoid of its end nodes. Returns the combined panel-to-
// panel weights.
Tensor pressure_weights(std::size_t n) {
  Tensor w(Shape::matrix(n, n));
  auto node = [&](std::size_t k, double scale, std::size_t row) {
    if (k == 0 || k == n) {
      w.at(row, 0) += 0.5 * scale;
      w.at(row, n - 1) += 0.5 * scale;
    } else {
      w.at(row, k - 1) += 0.5 * scale;
      w.at(row, k) += 0.5 * scale;
    }
  };
  for (std::size_t j = 0; j < n; ++j) {
    node(j, 0.5, j);
    node(j + 1, 0.5, j);
  }
  return w;
}

struct Iteration {
  Eigen::VectorXd x;
  std::size_t iterations = 0;
  std::vector<double> residuals;
};

// x <- x + step(x) until ||step||_inf-like residual drops below tol.
template <class Step>
Iteration richardson(Eigen::VectorXd x, double tol, std::size_t max_iter, const char* what, Step step) {
  Iteration it;
  for (std::size_t k = 0; k < max_iter; ++k) {
    auto [dx, residual] = step(x);
    if (!std::isfinite(residual)) {
      throw NonConvergence(std::string(what) + ": residual is not finite", std::move(it.residuals));
    }
    it.residuals.push_back(residual);
    if (residual < tol) {
      it.x = std::move(x);
      it.iterations = k;
      return it;
    }
    const auto m = it.residuals.size();
    if (m > kProgressWindow && it.residuals[m - 1] >= it.residuals[m - 1 - kProgressWindow]) {
      throw NonConvergence(std::string(what) + ": no residual reduction over " + std::to_string(kProgressWindow) +
                               " iterations",
                           std::move(it.residuals));
    }
    x += dx;
  }
  throw NonConvergence(std::string(what) + ": iteration limit " + std::to_string(max_iter) + " reached",
                       std::move(it.residuals));
}

Eigen::VectorXd inverse_diagonal(const PanelSystem& s) {
  Eigen::VectorXd d = s.A.diagonal();
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d[i] == 0.0) throw NumericalFailure("panel system has a zero diagonal entry at row " + std::to_string(i));
  }
  return d.cwiseInverse();
}

}  // namespace

void FlowConditions::validate() const {
  if (!std::isfinite(alpha) || std::abs(alpha) >= std::numbers::pi / 4) {
    throw InvalidArgument("angle of attack must satisfy |alpha| < pi/4");
  }
  if (!std::isfinite(v_inf) || v_inf <= 0.0) throw InvalidArgument("freestream speed must be positive");
}

PanelLoop panel_loop(const geometry::AirfoilShape& shape, std::size_t n_panels) {
  if (n_panels < 40 || n_panels % 2 != 0) {
    throw InvalidArgument("n_panels must be even and >= 40, got " + std::to_string(n_panels));
  }
  const auto s = geometry::resample(shape, n_panels / 2 + 1);
  PanelLoop loop;
  for (auto it = s.lower.rbegin(); it != s.lower.rend(); ++it) {
    loop.x.push_back(it->x);
    loop.y.push_back(it->y);
  }
  for (std::size_t i = 1; i < s.upper.size(); ++i) {
    loop.x.push_back(s.upper[i].x);
    loop.y.push_back(s.upper[i].y);
  }
  return loop;
}

TapedPanelModel record_panel_model(Var x_nodes, Var y_nodes, const FlowConditions& conditions) {
  conditions.validate();
  ad::Tape& tape = x_nodes.tape();
  const std::size_t n = x_nodes.value().size() - 1;
  if (n < 3 || y_nodes.value().size() != n + 1) throw InvalidArgument("panel loop needs matching node vectors");

  TapedPanelModel m;
  m.panels = n;
  const Shape vn = Shape::vector(n);
  const Shape nn = Shape::matrix(n, n);

  const Var x0 = slice(x_nodes, 0, vn), x1 = slice(x_nodes, 1, vn);
  const Var y0 = slice(y_nodes, 0, vn), y1 = slice(y_nodes, 1, vn);
  m.dx = x1 - x0;
  m.dy = y1 - y0;
  m.lengths = sqrt(m.dx * m.dx + m.dy * m.dy);
  for (std::size_t j = 0; j < n; ++j) {
    if (!(m.lengths.value()[j] > kMinPanelLength)) {
      throw GeometryError("degenerate panel of zero length", j);
    }
  }
  m.xm = 0.5 * (x0 + x1);
  m.ym = 0.5 * (y0 + y1);
  const Var c = m.dx / m.lengths;
  const Var s = m.dy / m.lengths;

  const Var xm_i = broadcast(m.xm, nn, Broadcast::repeat_cols);
  const Var ym_i = broadcast(m.ym, nn, Broadcast::repeat_cols);
  const Var dxj = xm_i - broadcast(x0, nn, Broadcast::repeat_rows);
  const Var dxjp = xm_i - broadcast(x1, nn, Broadcast::repeat_rows);
  const Var dyj = ym_i - broadcast(y0, nn, Broadcast::repeat_rows);
  const Var dyjp = ym_i - broadcast(y1, nn, Broadcast::repeat_rows);

  Tensor off(nn, 1.0), diag_pi(nn, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    off.at(i, i) = 0.0;
    diag_pi.at(i, i) = std::numbers::pi;
  }
  const Var off_mask = tape.constant(std::move(off));
  const Var self_angle = tape.constant(std::move(diag_pi));

  const Var flog_raw = 0.5 * log((dxjp * dxjp + dyjp * dyjp) / (dxj * dxj + dyj * dyj));
  const Var ftan_raw = atan2(dyjp * dxj - dxjp * dyj, dxjp * dxj + dyjp * dyj);
  const Var flog = off_mask * flog_raw;
  const Var ftan = off_mask * ftan_raw + self_angle;

  const Var c_i = broadcast(c, nn, Broadcast::repeat_cols), c_j = broadcast(c, nn, Broadcast::repeat_rows);
  const Var s_i = broadcast(s, nn, Broadcast::repeat_cols), s_j = broadcast(s, nn, Broadcast::repeat_rows);
  const Var ct = c_i * c_j + s_i * s_j;
  const Var st = s_i * c_j - s_j * c_i;
  const double inv2pi = 0.5 / std::numbers::pi;
  const Var a = inv2pi * (ftan * ct + flog * st);
  const Var b = inv2pi * (flog * ct - ftan * st);

  const Var ones = tape.constant(Tensor(vn, 1.0));
  const Var a_rows = matvec(a, ones);
  const Var b_rows = matvec(b, ones);

  const Var top = concat(a, as_column(b_rows), Axis::cols);
  const Var kutta_b = -(row_of(b, 0, n) + row_of(b, n - 1, n));
  const Var kutta_a = reshape(sum(row_of(a, 0, n) + row_of(a, n - 1, n)), Shape::matrix(1, 1));
  m.A = concat(top, concat(kutta_b, kutta_a, Axis::cols), Axis::rows);

  const double ca = std::cos(conditions.alpha), sa = std::sin(conditions.alpha);
  const double v = conditions.v_inf;
  const Var rhs_tan = (v * ca) * s - (v * sa) * c;
  const Var rhs_kutta = -(v * ca) * sum(gather(c, {0, n - 1})) - (v * sa) * sum(gather(s, {0, n - 1}));
  m.b = concat(rhs_tan, reshape(rhs_kutta, Shape::vector(1)));

  m.tangential = concat(-b, as_column(a_rows), Axis::cols);
  m.tangential_free = (v * ca) * c + (v * sa) * s;
  return m;
}

Var record_cp(const TapedPanelModel& m, Var u, const FlowConditions& conditions) {
  const Var vt = (matvec(m.tangential, u) + m.tangential_free) * (1.0 / conditions.v_inf);
  return 1.0 - vt * vt;
}

Var record_cl(const TapedPanelModel& m, Var cp, const FlowConditions& conditions) {
  const Var w = cp.tape().constant(pressure_weights(m.panels));
  const Var pm = matvec(w, cp);
  const double ca = std::cos(conditions.alpha), sa = std::sin(conditions.alpha);
  return -sum(pm * (ca * m.dx + sa * m.dy));
}

Var record_cm(const TapedPanelModel& m, Var cp) {
  const Var w = cp.tape().constant(pressure_weights(m.panels));
  const Var pm = matvec(w, cp);
  return sum(pm * ((m.xm - 0.25) * m.dx + m.ym * m.dy));
}

Var record_functional(const FlowFunctional& f, const TapedPanelModel& m, Var u, const FlowConditions& conditions) {
  const Var cp = record_cp(m, u, conditions);
  if (f.kind == FlowFunctional::Kind::lift) return record_cl(m, cp, conditions);
  switch (f.spec.kind) {
    case ObjectiveKind::target_cp: {
      if (f.spec.target_cp.size() != m.panels) {
        throw InvalidArgument("target Cp has " + std::to_string(f.spec.target_cp.size()) + " entries, expected " +
                              std::to_string(m.panels));
      }
      const Var target = u.tape().constant(Tensor::vector(f.spec.target_cp));
      const Var diff = cp - target;
      return 0.5 * sum(diff * diff * m.lengths);
    }
    case ObjectiveKind::max_cl:
      return -record_cl(m, cp, conditions);
    case ObjectiveKind::cm_magnitude: {
      const Var moment = record_cm(m, cp);
      return 0.5 * (moment * moment);
    }
  }
  throw InvalidArgument("unknown objective kind");
}

Var record_fixed_point_operator(const TapedPanelModel& m, Var u, double omega) {
  const std::size_t k = m.panels + 1;
  std::vector<std::size_t> diag(k);
  for (std::size_t i = 0; i < k; ++i) diag[i] = i * (k + 1);
  const Var pinv = power(gather(m.A, std::move(diag)), -1.0);
  return u - omega * (pinv * (matvec(m.A, u) - m.b));
}

PanelSystem assemble(const PanelLoop& loop, const FlowConditions& conditions) {
  if (loop.x.size() != loop.y.size() || loop.x.size() < 4) throw InvalidArgument("malformed panel loop");
  ad::Tape tape;
  const Var xs = tape.constant(Tensor::vector(loop.x));
  const Var ys = tape.constant(Tensor::vector(loop.y));
  const auto m = record_panel_model(xs, ys, conditions);
  PanelSystem s;
  s.loop = loop;
  s.conditions = conditions;
  s.A = to_eigen_matrix(m.A.value());
  s.b = to_eigen(m.b.value());
  s.tangential = to_eigen_matrix(m.tangential.value());
  s.tangential_free = to_eigen(m.tangential_free.value());
  s.dx = to_eigen(m.dx.value());
  s.dy = to_eigen(m.dy.value());
  s.lengths = to_eigen(m.lengths.value());
  s.xm = to_eigen(m.xm.value());
  s.ym = to_eigen(m.ym.value());
  return s;
}

PanelSystem assemble(const geometry::AirfoilShape& shape, std::size_t n_panels, const FlowConditions& conditions) {
  return assemble(panel_loop(shape, n_panels), conditions);
}

double estimate_spectral_radius(const PanelSystem& system, std::size_t iterations) {
  const Eigen::VectorXd p = inverse_diagonal(system);
  Eigen::VectorXd v = Eigen::VectorXd::Ones(system.A.rows());
  v.normalize();
  // Geometric mean of the growth factors over the second half of the sweep;
  // robust against the complex-pair oscillation of a plain Rayleigh ratio.
  double log_sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < iterations; ++k) {
    Eigen::VectorXd w = p.cwiseProduct(system.A * v);
    const double g = w.norm();
    if (g == 0.0) return 0.0;
    if (2 * k >= iterations) {
      log_sum += std::log(g);
      ++counted;
    }
    v = w / g;
  }
  return std::exp(log_sum / static_cast<double>(std::max<std::size_t>(counted, 1)));
}

double default_relaxation(const PanelSystem& system) { return 0.8 / estimate_spectral_radius(system); }

FixedPointResult solve_fixed_point(const PanelSystem& system, const FixedPointOptions& options) {
  const double omega = options.omega ? *options.omega : default_relaxation(system);
  if (!std::isfinite(omega)) throw InvalidArgument("relaxation factor must be finite");
  const Eigen::VectorXd p = inverse_diagonal(system);
  auto it = richardson(Eigen::VectorXd::Zero(system.A.rows()), options.tol, options.max_iter, "primal fixed point",
                       [&](const Eigen::VectorXd& u) {
                         Eigen::VectorXd r = system.A * u - system.b;
                         const double res = r.lpNorm<Eigen::Infinity>();
                         return std::pair<Eigen::VectorXd, double>(-omega * p.cwiseProduct(r), res);
                       });
  FixedPointResult out;
  out.u = std::move(it.x);
  out.omega = omega;
  out.iterations = it.iterations;
  out.residuals = std::move(it.residuals);
  return out;
}

Eigen::VectorXd solve_direct(const PanelSystem& system) {
  Eigen::VectorXd u = system.A.partialPivLu().solve(system.b);
  if (!u.allFinite()) throw NumericalFailure("direct panel solve produced non-finite values");
  return u;
}

Eigen::VectorXd cp(const PanelSystem& system, const Eigen::VectorXd& u) {
  const Eigen::VectorXd vt = (system.tangential * u + system.tangential_free) / system.conditions.v_inf;
  return Eigen::VectorXd::Ones(vt.size()) - vt.cwiseProduct(vt);
}

AeroCoefficients coefficients(const PanelSystem& system, const Eigen::VectorXd& u) {
  const std::size_t n = system.panels();
  const Tensor w = pressure_weights(n);
  const Eigen::VectorXd pm = to_eigen_matrix(w) * cp(system, u);
  const double ca = std::cos(system.conditions.alpha), sa = std::sin(system.conditions.alpha);
  AeroCoefficients out;
  out.cl = -pm.dot(ca * system.dx + sa * system.dy);
  const Eigen::VectorXd arm = (system.xm.array() - 0.25).matrix();
  out.cm = pm.dot(arm.cwiseProduct(system.dx) + system.ym.cwiseProduct(system.dy));
  out.cl_kutta_joukowski = 2.0 * u[static_cast<Eigen::Index>(n)] * system.lengths.sum() / system.conditions.v_inf;
  return out;
}

double objective(const ObjectiveSpec& spec, const PanelSystem& system, const Eigen::VectorXd& u) {
  switch (spec.kind) {
    case ObjectiveKind::target_cp: {
      if (spec.target_cp.size() != system.panels()) {
        throw InvalidArgument("target Cp has " + std::to_string(spec.target_cp.size()) + " entries, expected " +
                              std::to_string(system.panels()));
      }
      const Eigen::VectorXd diff =
          cp(system, u) - Eigen::Map<const Eigen::VectorXd>(spec.target_cp.data(), system.lengths.size());
      return 0.5 * diff.cwiseProduct(diff).dot(system.lengths);
    }
    case ObjectiveKind::max_cl:
      return -coefficients(system, u).cl;
    case ObjectiveKind::cm_magnitude: {
      const double m = coefficients(system, u).cm;
      return 0.5 * m * m;
    }
  }
  throw InvalidArgument("unknown objective kind");
}

double evaluate_functional(const FlowFunctional& f, const PanelSystem& system, const Eigen::VectorXd& u) {
  if (f.kind == FlowFunctional::Kind::lift) return coefficients(system, u).cl;
  return objective(f.spec, system, u);
}

ShapeChain ShapeChain::build(const geometry::AirfoilShape& base, const geometry::BumpBasis& bumps,
                             std::size_t n_panels) {
  const PanelLoop loop = panel_loop(base, n_panels);
  const std::size_t nodes = loop.x.size();
  const std::size_t half = bumps.size();
  const std::size_t lower_nodes = n_panels / 2 + 1;
  ShapeChain chain;
  chain.x_nodes = Eigen::Map<const Eigen::VectorXd>(loop.x.data(), static_cast<Eigen::Index>(nodes));
  chain.y_base = Eigen::Map<const Eigen::VectorXd>(loop.y.data(), static_cast<Eigen::Index>(nodes));
  chain.basis = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nodes), static_cast<Eigen::Index>(2 * half));
  for (std::size_t i = 0; i < nodes; ++i) {
    // Nodes before the leading edge belong to the lower surface; the leading
    // edge itself is shared and every bump vanishes there.
    const bool lower = i < lower_nodes - 1;
    const std::size_t offset = lower ? half : 0;
    for (std::size_t k = 0; k < half; ++k) {
      chain.basis(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(offset + k)) = bumps(k, loop.x[i]);
    }
  }
  return chain;
}

PanelLoop ShapeChain::loop(std::span<const double> delta) const {
  if (delta.size() != design_dim()) {
    throw InvalidArgument("design vector has " + std::to_string(delta.size()) + " entries, expected " +
                          std::to_string(design_dim()));
  }
  const Eigen::VectorXd y =
      y_base + basis * Eigen::Map<const Eigen::VectorXd>(delta.data(), static_cast<Eigen::Index>(delta.size()));
  PanelLoop out;
  out.x.assign(x_nodes.data(), x_nodes.data() + x_nodes.size());
  out.y.assign(y.data(), y.data() + y.size());
  return out;
}

Eigen::VectorXd solve_adjoint_direct(const PanelSystem& system, double omega, const Eigen::VectorXd& dj_du) {
  const Eigen::VectorXd p = inverse_diagonal(system);
  const Eigen::MatrixXd m = omega * (p.asDiagonal() * system.A);
  return m.transpose().partialPivLu().solve(dj_du);
}

std::vector<AdjointGradient> adjoint_gradients(std::span<const FlowFunctional> functionals, const ShapeChain& chain,
                                               std::span<const double> delta, const PanelSystem& system,
                                               const Eigen::VectorXd& u, const AdjointOptions& options) {
  if (delta.size() != chain.design_dim()) throw InvalidArgument("design vector size mismatch");
  if (static_cast<std::size_t>(u.size()) != system.panels() + 1) throw InvalidArgument("state size mismatch");
  const double omega = default_relaxation(system);
  const Eigen::VectorXd p = inverse_diagonal(system);
  const Eigen::MatrixXd mt = (omega * (p.asDiagonal() * system.A)).transpose();

  ad::Tape tape;
  const Var d = tape.variable(Tensor::vector(std::vector<double>(delta.begin(), delta.end())));
  const Var basis = tape.constant(Tensor::matrix(
      static_cast<std::size_t>(chain.basis.rows()), static_cast<std::size_t>(chain.basis.cols()),
      [&] {
        std::vector<double> v(static_cast<std::size_t>(chain.basis.size()));
        for (Eigen::Index i = 0; i < chain.basis.rows(); ++i)
          for (Eigen::Index j = 0; j < chain.basis.cols(); ++j)
            v[static_cast<std::size_t>(i * chain.basis.cols() + j)] = chain.basis(i, j);
        return v;
      }()));
  const Var xs = tape.constant(to_tensor(chain.x_nodes));
  const Var ys = tape.constant(to_tensor(chain.y_base)) + matvec(basis, d);
  const auto model = record_panel_model(xs, ys, system.conditions);
  const Var uv = tape.variable(to_tensor(u));
  const Var fp = record_fixed_point_operator(model, uv, omega);

  std::vector<AdjointGradient> out;
  out.reserve(functionals.size());
  for (const auto& f : functionals) {
    const Var j = record_functional(f, model, uv, system.conditions);
    const auto gj = tape.backward(j);
    const Eigen::VectorXd g = to_eigen(gj[uv]);
    auto it = richardson(Eigen::VectorXd::Zero(g.size()), options.tol, options.max_iter, "adjoint fixed point",
                         [&](const Eigen::VectorXd& lambda) {
                           Eigen::VectorXd step = g - mt * lambda;
                           const double res = step.lpNorm<Eigen::Infinity>();
                           return std::pair<Eigen::VectorXd, double>(std::move(step), res);
                         });
    const auto gf = tape.backward(fp, to_tensor(it.x));
    AdjointGradient r;
    r.value = j.item();
    r.gradient.resize(delta.size());
    const Tensor& direct = gj[d];
    const Tensor& through_state = gf[d];
    for (std::size_t k = 0; k < delta.size(); ++k) r.gradient[k] = direct[k] + through_state[k];
    r.state.lambda = std::move(it.x);
    r.state.iterations = it.iterations;
    r.state.residuals = std::move(it.residuals);
    out.push_back(std::move(r));
  }
  return out;
}

AdjointGradient adjoint_gradient(const FlowFunctional& functional, const ShapeChain& chain,
                                 std::span<const double> delta, const PanelSystem& system, const Eigen::VectorXd& u,
                                 const AdjointOptions& options) {
  return adjoint_gradients(std::span(&functional, 1), chain, delta, system, u, options).front();
}

}  // namespace latentfoil::flow
