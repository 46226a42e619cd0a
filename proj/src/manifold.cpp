#include "latentfoil/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "latentfoil/errors.hpp"

namespace latentfoil::manifold {

using ad::Tensor;

std::vector<double> score(const nn::NoisePredictor& model, std::span<const double> x,
                          const diffusion::NoiseSchedule& schedule) {
  ad::Tape tape;
  auto eps = model.predict(tape.constant(Tensor::vector({x.begin(), x.end()})), 1).value().data;
  const double beta = schedule.beta_at(1);
  for (auto& v : eps) v = -v / beta;
  return eps;
}

Eigen::MatrixXd score_jacobian(const nn::NoisePredictor& model, std::span<const double> x,
                               const diffusion::NoiseSchedule& schedule) {
  (void)schedule.beta_at(1);
  const std::size_t d = x.size();
  if (d != model.dim()) throw InvalidArgument("point length does not match the model");
  ad::Tape tape;
  const auto xv = tape.variable(Tensor::vector({x.begin(), x.end()}));
  const auto eps = model.predict(xv, 1);
  Eigen::MatrixXd j(d, d);
  Tensor seed = Tensor::vector(std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i) {
    seed[i] = 1.0;
    const auto grads = tape.backward(eps, seed);
    const auto& row = grads[xv];
    for (std::size_t k = 0; k < d; ++k) j(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = -row[k];
    seed[i] = 0.0;
  }
  return j;
}

Svd jacobi_svd(const Eigen::MatrixXd& a, double tol, int max_sweeps) {
  const Eigen::Index m = a.rows(), n = a.cols();
  if (m < n || n == 0) throw InvalidArgument("jacobi_svd needs a nonempty square or tall matrix");
  if (!a.allFinite()) throw InvalidArgument("jacobi_svd needs a finite matrix");
  Eigen::MatrixXd w = a;
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  Svd out;
  bool rotated = true;
  while (rotated) {
    if (out.sweeps == max_sweeps) {
      throw NumericalFailure("Jacobi SVD did not converge in " + std::to_string(max_sweeps) + " sweeps");
    }
    ++out.sweeps;
    rotated = false;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double alpha = w.col(p).squaredNorm();
        const double beta = w.col(q).squaredNorm();
        const double gamma = w.col(p).dot(w.col(q));
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (auto* mat : {&w, &v}) {
          const Eigen::VectorXd cp = mat->col(p);
          mat->col(p) = c * cp - s * mat->col(q);
          mat->col(q) = s * cp + c * mat->col(q);
        }
      }
    }
  }

  Eigen::VectorXd norms(n);
  for (Eigen::Index k = 0; k < n; ++k) norms(k) = w.col(k).norm();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return norms(i) > norms(j); });
  out.u = Eigen::MatrixXd::Zero(m, n);
  out.sigma.resize(n);
  out.v.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    out.sigma(k) = norms(src);
    if (norms(src) > 0.0) out.u.col(k) = w.col(src) / norms(src);
    out.v.col(k) = v.col(src);
  }
  return out;
}

SpectrumReport spectrum(const Eigen::MatrixXd& jacobian, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw InvalidArgument("rank threshold tau must lie in (0, 1)");
  const auto svd = jacobi_svd(jacobian);
  SpectrumReport r;
  r.tau = tau;
  r.sigma.assign(svd.sigma.data(), svd.sigma.data() + svd.sigma.size());
  const double top = r.sigma.front();
  r.rank = static_cast<std::size_t>(
      std::count_if(r.sigma.begin(), r.sigma.end(), [&](double s) { return top > 0.0 && s >= tau * top; }));
  auto ratio = [&](std::size_t k) {
    // sigma_k / sigma_{k+1}, 1-based k
    const double next = r.sigma[k];
    return next > 0.0 ? r.sigma[k - 1] / next : std::numeric_limits<double>::infinity();
  };
  for (std::size_t k = 1; k < r.sigma.size(); ++k) {
    if (r.sigma[k - 1] == 0.0) break;
    const double g = ratio(k);
    if (r.gap_index == 0 || g > r.gap_ratio) {
      r.gap_index = k;
      r.gap_ratio = g;
    }
  }
  if (r.rank > 0 && r.rank < r.sigma.size()) r.rank_gap_ratio = ratio(r.rank);
  return r;
}

SweepSummary spectrum_sweep(const nn::NoisePredictor& model, std::span<const std::vector<double>> points,
                            const diffusion::NoiseSchedule& schedule, double tau) {
  if (points.empty()) throw InvalidArgument("spectrum sweep needs at least one point");
  SweepSummary out;
  for (const auto& p : points) out.reports.push_back(spectrum(score_jacobian(model, p, schedule), tau));
  std::vector<double> ranks, gaps;
  for (const auto& r : out.reports) {
    ranks.push_back(static_cast<double>(r.rank));
    gaps.push_back(r.gap_ratio);
  }
  std::sort(ranks.begin(), ranks.end());
  const std::size_t n = ranks.size();
  out.median_rank = n % 2 == 1 ? ranks[n / 2] : 0.5 * (ranks[n / 2 - 1] + ranks[n / 2]);
  out.min_gap = *std::min_element(gaps.begin(), gaps.end());
  out.max_gap = *std::max_element(gaps.begin(), gaps.end());
  return out;
}

void write_spectrum_csv(std::ostream& out, std::span<const SpectrumReport> reports) {
  const std::size_t d = reports.empty() ? 0 : reports.front().sigma.size();
  out << "point";
  for (std::size_t i = 1; i <= d; ++i) out << ",sigma_" << i;
  out << ",rank,gap_index,gap_ratio,rank_gap_ratio\n";
  out.precision(17);
  for (std::size_t p = 0; p < reports.size(); ++p) {
    const auto& r = reports[p];
    out << p;
    for (double s : r.sigma) out << ',' << s;
    out << ',' << r.rank << ',' << r.gap_index << ',' << r.gap_ratio << ',' << r.rank_gap_ratio << '\n';
  }
}

void write_spectrum_svg(std::ostream& out, std::span<const SpectrumReport> reports) {
  constexpr double width = 640, height = 400, margin = 50;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t d = 1;
  for (const auto& r : reports) {
    d = std::max(d, r.sigma.size());
    for (double s : r.sigma) {
      if (s <= 0.0) continue;
      lo = std::min(lo, std::log10(s));
      hi = std::max(hi, std::log10(s));
    }
  }
  if (!(hi > lo)) {
    lo = std::isfinite(lo) ? lo - 1.0 : -1.0;
    hi = lo + 2.0;
  }
  auto px = [&](std::size_t i) { return margin + (width - 2 * margin) * static_cast<double>(i) / std::max<double>(1.0, static_cast<double>(d - 1)); };
  auto py = [&](double s) { return height - margin - (height - 2 * margin) * (std::log10(s) - lo) / (hi - lo); };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << width - 2 * margin << "\" height=\""
      << height - 2 * margin << "\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">index</text>\n";
  out << "<text x=\"12\" y=\"" << margin - 10 << "\">log10 sigma [" << lo << ", " << hi << "]</text>\n";
  for (const auto& r : reports) {
    out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-opacity=\"0.6\" points=\"";
    for (std::size_t i = 0; i < r.sigma.size(); ++i) {
      if (r.sigma[i] > 0.0) out << px(i) << ',' << py(r.sigma[i]) << ' ';
    }
    out << "\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace latentfoil::manifold
