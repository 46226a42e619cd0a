#pragma once

// Spectral signature of the learned data manifold: singular values of the
// scaled score Jacobian at t = 1. With s(x) = -eps_theta(x, 1) / beta_1,
//     J = d[beta_1 s(x)] / dx = -d eps_theta(x, 1) / dx,
// which should be low rank near the data manifold.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "latentfoil/denoiser.hpp"
#include "latentfoil/diffusion.hpp"

namespace latentfoil::manifold {

inline constexpr double kDefaultTau = 1e-2;

// s(x) = -eps_theta(x, 1) / beta_1.
std::vector<double> score(const nn::NoisePredictor& model, std::span<const double> x,
                          const diffusion::NoiseSchedule& schedule);

// Row i from one backward sweep seeded with e_i; one forward pass shared by all rows.
Eigen::MatrixXd score_jacobian(const nn::NoisePredictor& model, std::span<const double> x,
                               const diffusion::NoiseSchedule& schedule);

struct Svd {
  Eigen::MatrixXd u;
  Eigen::VectorXd sigma;  // descending
  Eigen::MatrixXd v;
  int sweeps = 0;
};

// One-sided (Hestenes) Jacobi on the columns of a square or tall matrix. A
// column pair is rotated while |a_p . a_q| > tol ||a_p|| ||a_q||. Throws
// NumericalFailure after `max_sweeps` sweeps without convergence.
Svd jacobi_svd(const Eigen::MatrixXd& a, double tol = 1e-12, int max_sweeps = 100);

struct SpectrumReport {
  std::vector<double> sigma;  // descending
  double tau = kDefaultTau;
  std::size_t rank = 0;       // #{sigma_i >= tau sigma_1}
  // Largest ratio sigma_k / sigma_{k+1} over consecutive values; k is 1-based,
  // 0 when there is only one value.
  std::size_t gap_index = 0;
  double gap_ratio = 1.0;
  // sigma_r / sigma_{r+1} at the numerical rank r; 1 when r = d.
  double rank_gap_ratio = 1.0;
};

SpectrumReport spectrum(const Eigen::MatrixXd& jacobian, double tau = kDefaultTau);

struct SweepSummary {
  std::vector<SpectrumReport> reports;
  double median_rank = 0.0;
  double min_gap = 0.0;
  double max_gap = 0.0;
};

SweepSummary spectrum_sweep(const nn::NoisePredictor& model, std::span<const std::vector<double>> points,
                            const diffusion::NoiseSchedule& schedule, double tau = kDefaultTau);

// point,sigma_1..sigma_d,rank,gap_index,gap_ratio,rank_gap_ratio
void write_spectrum_csv(std::ostream& out, std::span<const SpectrumReport> reports);
// Log-scale line plot of every spectrum.
void write_spectrum_svg(std::ostream& out, std::span<const SpectrumReport> reports);

}  // namespace latentfoil::manifold
