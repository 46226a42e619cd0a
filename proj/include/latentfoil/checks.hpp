#pragma once

// Finite-difference audits of the gradient chain beyond single autodiff ops:
// the flow adjoint, the sampler vector-Jacobian product and the end-to-end
// latent gradient. Each returns gradcheck rows (error, tolerance, trials).

#include <cstdint>
#include <vector>

#include "latentfoil/diffusion.hpp"
#include "latentfoil/geometry.hpp"
#include "latentfoil/gradcheck.hpp"

namespace latentfoil::checks {

// Two rows on NACA0012 at 3 degrees with a perturbed-shape target Cp:
//   max |lambda_fixed_point - lambda_direct| (tolerance 1e-8), and the
//   componentwise relative error of dJ/d(delta) over all components (1e-5).
std::vector<gradcheck::Row> flow_adjoint(std::size_t n_panels = 160, std::uint64_t seed = 3);

// backprop_through_sampler against central differences of xbar^T G(z).
gradcheck::Row sampler_vjp(const nn::NoisePredictor& model, const diffusion::NoiseSchedule& schedule,
                           std::size_t steps = 10, std::size_t pairs = 5, std::uint64_t seed = 7,
                           double tolerance = 1e-4);

// dJ/dz of the target-Cp objective through the flow adjoint and the sampler
// against central differences of J(denormalize(G(z))). The objective is
// evaluated with a direct solve so the differences do not inherit the
// fixed-point tolerance.
gradcheck::Row chain_gradient(const nn::NoisePredictor& model, const diffusion::NoiseSchedule& schedule,
                              const geometry::NormalizationBox& box, std::size_t steps = 10, std::size_t trials = 1,
                              std::uint64_t seed = 11, double tolerance = 1e-3);

}  // namespace latentfoil::checks
